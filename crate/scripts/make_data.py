#!/usr/bin/env python3
"""Regenerates the synthetic desk-scale data under data/.

Everything is derived from a fixed seed, so rerunning the script reproduces
the committed files byte for byte. Only the standard library is used.

Outputs:
  corpus.tsv            1,000 scored segments with planted filter scores
  corpus.survivors.txt  ids that pass the >= 0.85/0.80/0.80 rule (sorted)
  dev.tsv, test.tsv     clean sets for example draws and evaluation
  scores.tsv            synthetic neural scores keyed by "<id>#<shots>"
  hallucination.csv     100 paired sentence-BLEU scores, 2 planted flags
  desk.json             run configuration for the end-to-end pipeline
"""

import csv
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"
SEED = 20240917

PAIRS = [("en", "de"), ("de", "en"), ("en", "zh"), ("pt", "en")]
DOMAINS = ["Flores", "Medical", "Law", "Tico", "Chat"]
COLUMNS = ["id", "src_lang", "tgt_lang", "src_text", "tgt_text",
           "bicleaner", "kiwi_fwd", "kiwi_rev", "domain"]

# Planted score levels straddling the thresholds. "" means missing.
BICLEANER_LEVELS = ["", "0.5", "0.8499", "0.85", "0.851", "0.9", "1.0"]
KIWI_LEVELS = ["", "0.3", "0.7999", "0.8", "0.8001", "0.88", "0.95"]

SYLLABLES = ["ka", "lo", "mi", "ten", "ra", "su", "vel", "dor", "an", "pe",
             "tri", "os", "ul", "ben", "chi", "ma", "ro", "si", "gen", "fa"]


def make_lexicon(rng, lang, size=240):
    words = set()
    while len(words) < size:
        if lang == "zh":
            words.add("".join(chr(rng.randrange(0x4E00, 0x9FA5)) for _ in range(rng.randint(1, 2))))
        else:
            n = rng.randint(1, 3)
            words.add("".join(rng.choice(SYLLABLES) for _ in range(n)) + lang[0])
    return sorted(words)


class Language:
    def __init__(self, rng):
        self.lex = {lang: make_lexicon(rng, lang) for lang in {"en", "de", "zh", "pt"}}

    def sentence(self, rng, src, tgt):
        idx = [rng.randrange(240) for _ in range(rng.randint(6, 14))]
        sep_tgt = "" if tgt == "zh" else " "
        s = " ".join(self.lex[src][i] for i in idx)
        t = sep_tgt.join(self.lex[tgt][i] for i in idx)
        return s.capitalize() + ".", (t.capitalize() if tgt != "zh" else t) + ("。" if tgt == "zh" else ".")


def passes(value, threshold):
    return value != "" and float(value) >= threshold


def write_tsv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([r[c] for c in COLUMNS])


def segments(rng, lang, prefix, n, seen, scored):
    rows = []
    for i in range(n):
        src, tgt = PAIRS[i % len(PAIRS)]
        while True:
            s, t = lang.sentence(rng, src, tgt)
            if s not in seen:
                seen.add(s)
                break
        if scored:
            b, f, r = rng.choice(BICLEANER_LEVELS), rng.choice(KIWI_LEVELS), rng.choice(KIWI_LEVELS)
        else:
            b, f, r = "0.95", "0.9", "0.9"
        rows.append({
            "id": f"{prefix}{i:04d}", "src_lang": src, "tgt_lang": tgt,
            "src_text": s, "tgt_text": t, "bicleaner": b, "kiwi_fwd": f, "kiwi_rev": r,
            "domain": DOMAINS[(i // len(PAIRS)) % len(DOMAINS)],
        })
    return rows


def hallucination_rows(rng):
    """100 zero/few-shot sentence-BLEU pairs. Rows 0 and 1 are flagged;
    rows 2 and 3 sit exactly on the thresholds and must not be."""
    rows = []
    for i in range(100):
        domain = DOMAINS[i % len(DOMAINS)]
        system = "ft-a" if i % 2 == 0 else "ft-b"
        pair = "de-en" if i % 4 < 2 else "en-de"
        if i in (0, 1):
            zero, few = 30.5 + i * 10, 2.99 - i
        elif i == 2:
            zero, few = 30.0, 1.0
        elif i == 3:
            zero, few = 55.0, 3.0
        else:
            zero = round(rng.uniform(0, 100), 2)
            # keep every other row clear of the flag region
            few = round(rng.uniform(3.01, 100), 2) if zero > 30 else round(rng.uniform(0, 100), 2)
        rows.append({"segment_id": f"h{i:03d}", "domain": domain, "system": system,
                     "pair": pair, "zero_bleu": f"{zero}", "few_bleu": f"{few}"})
    return rows


def main():
    rng = random.Random(SEED)
    lang = Language(rng)
    DATA.mkdir(exist_ok=True)
    seen = set()

    corpus = segments(rng, lang, "c", 1000, seen, scored=True)
    write_tsv(DATA / "corpus.tsv", corpus)
    survivors = sorted(r["id"] for r in corpus
                       if passes(r["bicleaner"], 0.85) and passes(r["kiwi_fwd"], 0.80)
                       and passes(r["kiwi_rev"], 0.80))
    (DATA / "corpus.survivors.txt").write_text("".join(s + "\n" for s in survivors))

    write_tsv(DATA / "dev.tsv", segments(rng, lang, "d", 80, seen, scored=False))
    test = segments(rng, lang, "t", 100, seen, scored=False)
    write_tsv(DATA / "test.tsv", test)

    with open(DATA / "scores.tsv", "w", encoding="utf-8") as f:
        f.write("segment_id\tcomet\tkiwi\n")
        for r in test:
            for shots in (0, 5):
                f.write(f"{r['id']}#{shots}\t{rng.uniform(0.6, 0.95):.4f}\t{rng.uniform(0.55, 0.9):.4f}\n")

    with open(DATA / "hallucination.csv", "w", newline="", encoding="utf-8") as f:
        w = csv.DictWriter(f, fieldnames=["segment_id", "domain", "system", "pair", "zero_bleu", "few_bleu"],
                           lineterminator="\n")
        w.writeheader()
        w.writerows(hallucination_rows(rng))

    config = {
        "seed": 7,
        "paths": {
            "corpus_in": "data/corpus.tsv",
            "pools_out": "out/pools",
            "dataset_out": "out/train.jsonl",
            "dev_in": "data/dev.tsv",
            "test_in": "data/test.tsv",
            "eval_out": "out/eval.jsonl",
            "generations_out": "out/generations.jsonl",
            "scores_in": "data/scores.tsv",
            "reports_out": "out/reports",
        },
        "filter": {"bicleaner_min": 0.85, "kiwi_min": 0.80, "per_pair_cap": 500, "example_pool_size": 10},
        "policy": {"variant": "balanced", "max_shots": 5},
        "dataset": {"n_records": 2000, "eval_shots": [0, 5]},
        "endpoint": {"url": "http://127.0.0.1:8000/v1/completions", "concurrency": 4,
                     "backoff_base_ms": 10, "backoff_max_ms": 100},
        "decoding": {"max_tokens": 64, "temperature": 0.0, "mode": "pretrained"},
        "analysis": {"system": "desk"},
    }
    (DATA / "desk.json").write_text(json.dumps(config, indent=2) + "\n")
    print(f"{len(corpus)} corpus segments, {len(survivors)} survivors")


if __name__ == "__main__":
    main()
