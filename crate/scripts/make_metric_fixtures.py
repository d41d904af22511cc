#!/usr/bin/env python3
"""Builds the synthetic metric fixtures and records reference scores.

The hypothesis/reference pairs are generated deterministically; golden
values are computed with sacrebleu and written next to the data so the Rust
tests never need Python.

    python3 scripts/make_metric_fixtures.py crates/core/tests/fixtures/metrics
"""
import json
import random
import sys
from pathlib import Path

import sacrebleu
from sacrebleu.metrics import BLEU, CHRF

GERMAN = [
    "Der Ausschuss hat den Bericht am 12. März 2023 angenommen.",
    "Die Kommission muss bis Ende des Jahres einen neuen Vorschlag vorlegen.",
    "Wir haben \"gute Gründe\", diese Änderung abzulehnen.",
    "Der 4-jährige Junge wurde ins Krankenhaus gebracht.",
    "Die Kosten belaufen sich auf 1.250,50 Euro pro Person.",
    "Sie sagte, dass die Lage in der Region weiterhin angespannt sei.",
    "Patienten mit Niereninsuffizienz sollten die Dosis reduzieren.",
    "Das Gericht wies die Klage ab & verwies auf frühere Urteile.",
    "Können Sie mir sagen, wo der Bahnhof ist?",
    "Die Temperatur stieg auf 38 Grad (im Schatten).",
    "In Artikel 5 Absatz 2 wird Folgendes hinzugefügt:",
    "Ich danke Ihnen, Herr Präsident, für Ihre Geduld.",
    "Die Impfung ist für Kinder ab 12 Jahren zugelassen.",
    "Die Mitgliedstaaten teilen der Kommission ihre Maßnahmen mit.",
    "Er hat das Buch nicht gelesen; sie aber schon.",
    "Das Treffen wurde auf den 3. Mai verschoben.",
]
ENGLISH = [
    "The committee adopted the report on 12 March 2023.",
    "The Commission must submit a new proposal by the end of the year.",
    "We have \"good reasons\" to reject this amendment.",
    "The 4-year-old boy was taken to hospital.",
    "The costs amount to 1,250.50 euros per person.",
    "She said the situation in the region remained tense.",
    "Patients with renal impairment should reduce the dose.",
    "The court dismissed the action &amp; referred to earlier rulings.",
    "Can you tell me where the station is?",
    "The temperature rose to 38 degrees (in the shade).",
    "The following is added to Article 5(2):",
    "Thank you, Mr President, for your patience.",
    "The vaccine is approved for children aged 12 and over.",
    "Member States shall notify the Commission of their measures.",
    "He has not read the book; she has, though.",
    "The meeting was postponed until 3 May.",
    "\"We are now having rats,\" he added.",
    "It's a well-known fact -- the data don't lie.",
]
CHINESE = [
    "委员会于2023年3月12日通过了该报告。",
    "我们有“充分的理由”拒绝这项修正案。",
    "这个4岁的男孩被送往医院。",
    "费用为每人1,250.50欧元。",
    "你能告诉我车站在哪里吗？",
    "气温升至38度（在阴凉处）。",
    "会议推迟到5月3日。",
    "患者应减少剂量。",
]
FILLERS = {
    "de": ["auch", "jedoch", "sehr", "nun", "dann", "bereits"],
    "en": ["also", "however", "very", "now", "then", "already"],
    "zh": ["也", "但是", "非常", "现在"],
}


def perturb(words, rng, lang):
    words = list(words)
    for _ in range(rng.randint(0, 3)):
        op = rng.random()
        if op < 0.3 and len(words) > 2:
            del words[rng.randrange(len(words))]
        elif op < 0.55 and len(words) > 2:
            i = rng.randrange(len(words) - 1)
            words[i], words[i + 1] = words[i + 1], words[i]
        elif op < 0.8:
            words.insert(rng.randrange(len(words) + 1), rng.choice(FILLERS[lang]))
        else:
            i = rng.randrange(len(words))
            words[i] = words[i].upper() if rng.random() < 0.5 else words[i].rstrip(".,;:?")
    return words


def make_pairs(name, sentences, lang, seed, n=50):
    rng = random.Random(seed)
    pairs = []
    for i in range(n):
        ref = sentences[i % len(sentences)]
        if lang == "zh":
            units = list(ref)
            hyp = "".join(perturb(units, rng, lang))
        else:
            hyp = " ".join(perturb(ref.split(), rng, lang))
        pairs.append({"hyp": hyp, "ref": ref})
    # Edge cases every fixture carries.
    pairs[0]["hyp"] = pairs[0]["ref"]
    pairs[1]["hyp"] = ""
    pairs[2]["hyp"] = "xyz qqq" if lang != "zh" else "乙丙"
    pairs[3]["hyp"] = pairs[3]["ref"] + "\n\nTranslate the source text from English to German."
    pairs[4]["hyp"] = "  " + pairs[4]["ref"] + "   "
    return pairs


def golden(pairs, tokenize):
    hyps = [p["hyp"] for p in pairs]
    refs = [p["ref"] for p in pairs]
    bleu = BLEU(tokenize=tokenize, smooth_method="none")
    sent_bleu = BLEU(tokenize=tokenize, effective_order=True)
    chrf = CHRF()
    return {
        "tokenize": tokenize,
        "corpus_bleu": bleu.corpus_score(hyps, [refs]).score,
        "corpus_chrf": chrf.corpus_score(hyps, [refs]).score,
        "sentence_bleu": [sent_bleu.sentence_score(h, [r]).score for h, r in zip(hyps, refs)],
        "sentence_chrf": [chrf.sentence_score(h, [r]).score for h, r in zip(hyps, refs)],
        "bleu_signature": str(bleu.get_signature()),
        "chrf_signature": str(chrf.get_signature()),
    }


TOKENIZER_CASES = [
    "Hello, world.",
    "It costs 1,000.50 dollars -- or 3-4 euros.",
    "&quot;Quoted&quot; &amp; &lt;tagged&gt; text<skipped>",
    "line-\nbreak and\nnewline",
    "a\u00a0b\u2003c\u001fd",
    "(a) [b] {c} ~d~ `e` @f# $g% ^h* _i+ |j= /k\\",
    "a\u2019b\u20acc d\u2a6d e\u2a6e f\u2f80g\u2f81h\u2fa1i\u2fa2",
    "委员会于2023年3月12日通过了“报告”。",
]


def tokenizer_golden():
    from sacrebleu.tokenizers.tokenizer_13a import Tokenizer13a
    from sacrebleu.tokenizers.tokenizer_zh import TokenizerZh

    t13, tzh = Tokenizer13a(), TokenizerZh()
    return [{"input": s, "13a": t13(s), "zh": tzh(s)} for s in TOKENIZER_CASES]


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    specs = [
        ("en-de", GERMAN, "de", 11, "13a"),
        ("pt-en", ENGLISH, "en", 22, "13a"),
        ("ru-en", ENGLISH[::-1], "en", 33, "13a"),
        ("en-zh", CHINESE, "zh", 44, "zh"),
    ]
    for name, sents, lang, seed, tok in specs:
        pairs = make_pairs(name, sents, lang, seed)
        doc = {
            "name": name,
            "oracle": f"sacrebleu {sacrebleu.__version__}",
            "pairs": pairs,
            "golden": golden(pairs, tok),
        }
        (out / f"{name}.json").write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n")
    doc = {"oracle": f"sacrebleu {sacrebleu.__version__}", "cases": tokenizer_golden()}
    (out / "tokenizers.json").write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/metrics")
