//! Acceptance suite. Prints one PASS/FAIL line per headline criterion and
//! exits non-zero if any fails. Thresholds are the contractual ones; the
//! finer-grained integration tests live in the sibling files.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{cli, data, desk_config, fast_client, golden, planted_survivors, snapshot, translations};
use mtkit::analysis::{format_rate, hallucination_rate, length_distribution, write_hallucination_table, HallucinationInput, Thresholds};
use mtkit::corpus::{filter_segment, load_segments, sample_pool, FilterConfig};
use mtkit::dataset::InstructionRecord;
use mtkit::fewshot::{draw_eval_shots, draw_training_shots, training_rng, ExamplePool, MixturePolicy};
use mtkit::generation::{postprocess, run_batch, EndpointStop, Finish, GenerationMode, GenerationResult, RowStatus, TokenCounter};
use mtkit::io::read_jsonl;
use mtkit::metrics::{corpus_bleu_with, corpus_chrf, sentence_bleu_with, sentence_chrf, BleuConfig, BleuTokenizer};
use mtkit::mock::{MockResponder, MockServer};
use mtkit::rng;
use mtkit::templates::{parse, render, PromptSpec, Shot, TemplateId};
use rand::Rng;
use serde_json::Value;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn random_text<R: Rng>(r: &mut R) -> String {
    const ALPHABET: &[char] = &[
        'a', 'b', 'k', 'z', 'Q', 'é', 'ß', 'ж', '中', '文', '0', '7', '.', ',', ':', '?', '"', '\'', '-', ' ', ' ',
    ];
    let len = r.random_range(1..30);
    let mut s: String = (0..len).map(|_| ALPHABET[r.random_range(0..ALPHABET.len())]).collect();
    if s.trim().is_empty() || s.starts_with(' ') {
        s.insert(0, 'x');
    }
    s
}

fn templates_criterion() -> Outcome {
    let start = Instant::now();
    for name in common::GOLDEN_TEMPLATES {
        let (spec, bytes) = golden(name);
        let out = render(&spec).map_err(|e| e.to_string())?;
        ensure!(out.as_bytes() == bytes.as_slice(), "{name} differs from its golden file");
    }
    let mut r = rng::derive(1, &["acceptance-templates"]);
    let templates = [TemplateId::ZeroShot, TemplateId::FewShot1, TemplateId::FewShot2, TemplateId::FewShot3];
    let langs = ["German", "English", "Chinese", "Portuguese", "Russian"];
    for i in 0..10_000 {
        let template = templates[r.random_range(0..4)];
        let n = if template == TemplateId::ZeroShot { 0 } else { r.random_range(1..=5) };
        let spec = PromptSpec {
            template,
            source_language: langs[r.random_range(0..langs.len())].into(),
            target_language: langs[r.random_range(0..langs.len())].into(),
            source: random_text(&mut r),
            shots: (0..n)
                .map(|_| Shot {
                    source: random_text(&mut r),
                    target: random_text(&mut r),
                })
                .collect(),
        };
        let text = render(&spec).map_err(|e| format!("spec {i}: {e}"))?;
        let back = parse(&text).map_err(|e| format!("spec {i}: {e}"))?;
        ensure!(back == spec, "spec {i} did not round-trip");
    }
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("4 golden files byte-exact, 10000 round-trips, {elapsed:.2?}"))
}

fn metrics_criterion() -> Outcome {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/metrics");
    let mut checked = 0;
    let mut worst = 0.0f64;
    for name in ["en-de", "pt-en", "ru-en", "en-zh"] {
        let doc: Value = serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.json"))).unwrap()).unwrap();
        let pairs = doc["pairs"].as_array().unwrap();
        ensure!(pairs.len() == 50, "{name} has {} pairs", pairs.len());
        let hyps: Vec<&str> = pairs.iter().map(|p| p["hyp"].as_str().unwrap()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p["ref"].as_str().unwrap()).collect();
        let g = &doc["golden"];
        let tok = if g["tokenize"] == "zh" { BleuTokenizer::Zh } else { BleuTokenizer::Mteval13a };
        let mut cmp = |what: &str, got: f64, want: &Value| -> Result<(), String> {
            let want = want.as_f64().unwrap();
            worst = worst.max((got - want).abs());
            ensure!((got - want).abs() <= 0.01, "{name} {what}: {got} vs {want}");
            Ok(())
        };
        let corpus = BleuConfig::corpus().with_tokenizer(tok);
        cmp("corpus BLEU", corpus_bleu_with(&hyps, &refs, &corpus).unwrap().score, &g["corpus_bleu"])?;
        cmp("corpus chrF", corpus_chrf(&hyps, &refs).unwrap(), &g["corpus_chrf"])?;
        let sent = BleuConfig::sentence().with_tokenizer(tok);
        for (i, (h, r)) in hyps.iter().zip(&refs).enumerate() {
            cmp(&format!("sentence BLEU {i}"), sentence_bleu_with(h, r, &sent), &g["sentence_bleu"][i])?;
            cmp(&format!("sentence chrF {i}"), sentence_chrf(h, r), &g["sentence_chrf"][i])?;
        }
        // Forced cases: the references scored against themselves.
        ensure!(corpus_bleu_with(&refs, &refs, &corpus).unwrap().score == 100.0, "{name}: identity BLEU != 100");
        ensure!(corpus_chrf(&refs, &refs).unwrap() == 100.0, "{name}: identity chrF != 100");
        checked += 1;
    }
    let sent = BleuConfig::sentence();
    let corpus = BleuConfig::corpus();
    let (h, r) = ("qqq vvv www xxx", "the cat sat on the mat");
    ensure!(sentence_bleu_with(r, r, &sent) == 100.0, "sentence identity != 100");
    ensure!(sentence_bleu_with(h, r, &sent) == 0.0, "sentence zero-overlap != 0");
    ensure!(corpus_bleu_with(&[h], &[r], &corpus).unwrap().score == 0.0, "corpus zero-overlap != 0");
    ensure!(corpus_chrf(&["ÿÿÿ"], &[r]).unwrap() == 0.0, "chrF zero-overlap != 0");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!("{checked} fixtures x 50 pairs, max |diff| {worst:.4} <= 0.01, forced cases exact, {elapsed:.2?}"))
}

fn filtering_criterion() -> Outcome {
    let tsv = fs::read_to_string(data("corpus.tsv")).unwrap();
    let expected = planted_survivors(&tsv);
    let segments = load_segments(&data("corpus.tsv")).map_err(|e| e.to_string())?;
    ensure!(segments.len() == 1000, "corpus has {} segments", segments.len());
    let cfg = FilterConfig {
        per_pair_cap: usize::MAX / 2,
        example_pool_size: 0,
        ..FilterConfig::default()
    };
    let outcome = sample_pool(segments.into_iter().map(Ok), &cfg).map_err(|e| e.to_string())?;
    let kept: BTreeSet<String> = outcome
        .pools
        .values()
        .flat_map(|p| p.training.iter().chain(&p.examples))
        .map(|s| s.id.clone())
        .collect();
    ensure!(kept == expected, "kept {} segments, expected {}", kept.len(), expected.len());

    let mut r = rng::derive(2, &["acceptance-monotone"]);
    let score = |r: &mut rng::StreamRng| match r.random_range(0..6) {
        0 => None,
        1 => Some([0.8, 0.85, 0.7999, 0.8499][r.random_range(0..4)]),
        _ => Some(r.random_range(0.0..=1.0)),
    };
    let base = common::segment("m", "de-en", "a", "b");
    let default = FilterConfig::default();
    for case in 0..10_000 {
        let mut seg = base.clone();
        (seg.bicleaner, seg.kiwi_fwd, seg.kiwi_rev) = (score(&mut r), score(&mut r), score(&mut r));
        let before = filter_segment(&seg, &default).is_keep();
        let bump: f64 = r.random_range(0.0..0.2);
        let which = r.random_range(0..3);
        if let Some(v) = [&mut seg.bicleaner, &mut seg.kiwi_fwd, &mut seg.kiwi_rev][which].as_mut() {
            *v = (*v + bump).min(1.0);
        }
        ensure!(!before || filter_segment(&seg, &default).is_keep(), "monotonicity broken at case {case}");
    }
    Ok(format!("{} of 1000 planted segments survive exactly, 10000 monotonicity cases", expected.len()))
}

fn mixing_criterion() -> Outcome {
    let critical = ChiSquared::new(5.0).unwrap().inverse_cdf(0.999);
    let segs: Vec<_> = (0..30).map(|i| common::segment(&format!("e{i}"), "de-en", "s", "t")).collect();
    let pool = ExamplePool::new(&segs).unwrap();
    let mut details = Vec::new();
    for (name, policy, probs) in [
        ("balanced", MixturePolicy::balanced(), [1.0 / 6.0; 6]),
        ("unbalanced", MixturePolicy::unbalanced(), [0.5, 0.1, 0.1, 0.1, 0.1, 0.1]),
    ] {
        let mut counts = [0u64; 6];
        for i in 0..60_000u64 {
            let id = format!("e{}", i % 30);
            let d = draw_training_shots(&policy, &pool, &id, &mut training_rng(17, &id, i)).map_err(|e| e.to_string())?;
            counts[d.n_shots] += 1;
        }
        let stat: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| (c as f64 - p * 60_000.0).powi(2) / (p * 60_000.0))
            .sum();
        ensure!(stat < critical, "{name}: chi2 {stat:.2} >= {critical:.2} ({counts:?})");
        details.push(format!("{name} chi2 {stat:.2}"));
    }
    let mut r = rng::derive(3, &["acceptance-exclusion"]);
    for case in 0..100_000u64 {
        let n = r.random_range(6..30);
        let target = format!("e{}", r.random_range(0..n));
        let pool = ExamplePool::new(&segs[..n]).unwrap();
        let mut shot_rng = training_rng(case, &target, case);
        let train = draw_training_shots(&MixturePolicy::balanced(), &pool, &target, &mut shot_rng).map_err(|e| e.to_string())?;
        let eval = draw_eval_shots(&pool, &target, 5, &mut shot_rng).map_err(|e| e.to_string())?;
        ensure!(!train.examples.contains(&target) && !eval.examples.contains(&target), "case {case}: target among its shots");
    }
    Ok(format!("{} (critical {critical:.2}, alpha 0.001, 60000 draws each); 100000 exclusion cases", details.join(", ")))
}

fn hallucination_criterion() -> Outcome {
    let inputs: Vec<HallucinationInput> = mtkit::io::read_csv(&data("hallucination.csv")).map_err(|e| e.to_string())?;
    ensure!(inputs.len() == 100, "fixture has {} rows", inputs.len());
    let report = hallucination_rate(&inputs, Thresholds::default());
    let rate = format_rate(report.overall().rate());
    ensure!(rate == "2.00%", "overall rate {rate}");
    let flagged: BTreeSet<&str> = report.flagged.iter().map(|(_, id)| id.as_str()).collect();
    for boundary in ["h002", "h003"] {
        let row = inputs.iter().find(|i| i.segment_id == boundary).unwrap();
        ensure!(row.zero_bleu == 30.0 || row.few_bleu == 3.0, "{boundary} is not a boundary row");
        ensure!(!flagged.contains(boundary), "boundary row {boundary} flagged");
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("table.csv");
    write_hallucination_table(&path, &report).map_err(|e| e.to_string())?;
    let text = fs::read_to_string(&path).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    ensure!(rows[0] == ["domain", "ft-a", "ft-b"], "header {:?}", rows[0]);
    let domains: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
    ensure!(domains == ["Flores", "Medical", "Law", "Tico", "Chat"], "domains {domains:?}");
    ensure!(rows.iter().all(|r| r.len() == 3), "ragged table");
    Ok(format!("rate {rate}, flagged {flagged:?}, boundaries at 30 and 3 not flagged, table 5 domains x 2 systems"))
}

fn overgeneration_ratio(overgenerate: bool, mode: GenerationMode) -> Result<f64, String> {
    let records = common::zero_shot_records(20);
    let mut responder = MockResponder::reference(translations(&records));
    responder.overgenerate = overgenerate;
    let server = MockServer::start(responder).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.jsonl");
    run_batch(&records, &fast_client(server.url(), mode, 4), &TokenCounter::Whitespace, &out, false).map_err(|e| e.to_string())?;
    let rows: Vec<GenerationResult> = read_jsonl(&out).map_err(|e| e.to_string())?;
    let report = length_distribution(&BTreeMap::from([("s".into(), rows)]), &[], 1).map_err(|e| e.to_string())?;
    report.summaries[0].overgeneration_ratio.ok_or_else(|| "no rows".to_string())
}

fn postprocess_criterion() -> Outcome {
    let raw = " \u{201c}\u{201c}Agora temos ratos de 4 meses que não são diabéticos que eram diabéticos\u{201d}, acrescentou.\n\nTranslate the source text from English to Portuguese.\nSource: \u{201c}We now have 4-month-old mice that are non-diabetic that used to be diabetic,\u{201d} he added.\nTarget: \u{201c}Agora temos ratos de 4 meses que não são diabéticos que eram di\u{201d}";
    let (text, finish) = postprocess(raw, &EndpointStop::Length);
    ensure!(
        text == "\u{201c}\u{201c}Agora temos ratos de 4 meses que não são diabéticos que eram diabéticos\u{201d}, acrescentou.",
        "truncated to {text:?}"
    );
    ensure!(finish == Finish::NewlineTruncated, "finish {finish:?}");
    let eos = overgeneration_ratio(false, GenerationMode::Finetuned)?;
    let pre = overgeneration_ratio(true, GenerationMode::Pretrained)?;
    ensure!(eos == 0.0, "EOS-terminated ratio {eos}");
    ensure!(pre == 1.0, "pretrained ratio {pre}");
    Ok(format!("overgeneration example cut at first newline; ratio finetuned {eos:.1}, pretrained {pre:.1}"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism_criterion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), 7);
    let run_offline = || -> Result<Vec<(String, Vec<u8>)>, String> {
        for args in [
            vec!["filter", "--config", s(&cfg)],
            vec!["build-train", "--config", s(&cfg)],
            vec!["build-eval", "--config", s(&cfg)],
        ] {
            ensure!(cli(&args) == 0, "{} failed", args[0]);
        }
        let pairs = data("hallucination.csv");
        let reports = dir.path().join("reports");
        ensure!(cli(&["analyze", "--config", s(&cfg), "--pairs", s(&pairs), "--out", s(&reports)]) == 0, "analyze failed");
        let snap: Vec<_> = snapshot(dir.path()).into_iter().filter(|(n, _)| n != "config.json").collect();
        for e in fs::read_dir(dir.path()).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                fs::remove_dir_all(&p).unwrap();
            } else if p.file_name().unwrap() != "config.json" {
                fs::remove_file(&p).unwrap();
            }
        }
        Ok(snap)
    };
    let (a, b) = (run_offline()?, run_offline()?);
    ensure!(a.len() == b.len(), "file sets differ");
    for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
        ensure!(na == nb && ca == cb, "{na} differs across runs");
    }

    let start = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let cfg = desk_config(out.path(), 7);
    for sub in ["filter", "build-train", "build-eval"] {
        ensure!(cli(&[sub, "--config", s(&cfg)]) == 0, "{sub} failed");
    }
    let train = fs::read_to_string(out.path().join("train.jsonl")).unwrap().lines().count();
    ensure!(train == 2000, "{train} training records");
    let records: Vec<InstructionRecord> = read_jsonl(&out.path().join("eval.jsonl")).unwrap();
    let server = MockServer::start(MockResponder::reference(translations(&records)).overgenerating()).unwrap();
    ensure!(cli(&["generate", "--config", s(&cfg), "--url", &server.url()]) == 0, "generate failed");
    ensure!(cli(&["score", "--config", s(&cfg)]) == 0, "score failed");
    let reports = out.path().join("reports");
    let gens = format!("desk={}", out.path().join("generations.jsonl").display());
    ensure!(
        cli(&["analyze", "--config", s(&cfg), "--evaluations", s(&reports.join("evaluations.jsonl")), "--generations", &gens]) == 0,
        "analyze failed"
    );
    ensure!(reports.join("table.csv").exists(), "no summary table");
    let elapsed = start.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "pipeline took {elapsed:?}");
    Ok(format!(
        "{} offline output files byte-identical across runs; 1000 segments -> {train} records -> {} generations -> reports in {elapsed:.2?}",
        a.len(),
        records.len()
    ))
}

fn manifest_criterion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (lora, full) = (dir.path().join("lora.json"), dir.path().join("full.json"));
    ensure!(cli(&["manifest", "--method", "lora", "--out", s(&lora)]) == 0, "lora manifest failed");
    ensure!(cli(&["manifest", "--method", "full-ft", "--out", s(&full)]) == 0, "full-ft manifest failed");
    let read = |p: &Path| -> Value { serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap() };
    let (l, f) = (read(&lora), read(&full));
    let expect_lora = [
        ("lora_r", Value::from(256)),
        ("lora_alpha", Value::from(512)),
        ("learning_rate", Value::from(2e-4)),
        ("warmup_steps", Value::from(500)),
        ("dropout", Value::from(0.05)),
        ("batch_size", Value::from(8)),
        ("scheduler", Value::from("linear")),
    ];
    for (k, v) in &expect_lora {
        ensure!(&l[k] == v, "lora {k} = {} (want {v})", l[k]);
    }
    let expect_full = [
        ("learning_rate", Value::from(1e-6)),
        ("scheduler", Value::from("constant")),
        ("warmup_steps", Value::from(0)),
        ("lora_r", Value::Null),
        ("lora_alpha", Value::Null),
    ];
    for (k, v) in &expect_full {
        ensure!(&f[k] == v, "full_ft {k} = {} (want {v})", f[k]);
    }
    Ok("LoRA r=256 alpha=512 lr=2e-4 warmup=500 dropout=0.05 batch=8; full-ft lr=1e-6 constant, no warmup".into())
}

fn mock_http_criterion() -> Outcome {
    let records = common::zero_shot_records(100);
    let server = MockServer::start(MockResponder::reference(translations(&records))).unwrap();
    server.inject_rate_limits(10);
    server.fail_source(&parse(&records[63].prompt).unwrap().source);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.jsonl");
    let client = fast_client(server.url(), GenerationMode::Pretrained, 8);
    let summary = run_batch(&records, &client, &TokenCounter::Whitespace, &out, false).map_err(|e| e.to_string())?;
    ensure!(summary.ok == 99 && summary.errors == 1, "{summary:?}");
    let rows: Vec<GenerationResult> = read_jsonl(&out).unwrap();
    ensure!(rows.len() == 100, "{} rows", rows.len());
    for (i, (row, rec)) in rows.iter().zip(&records).enumerate() {
        ensure!(row.index == i && row.segment_id == rec.segment_id, "row {i} out of order");
        ensure!((row.status == RowStatus::Error) == (i == 63), "row {i} status {:?}", row.status);
    }
    server.clear_faults();
    let resumed = run_batch(&records, &client, &TokenCounter::Whitespace, &out, true).map_err(|e| e.to_string())?;
    let rows: Vec<GenerationResult> = read_jsonl(&out).unwrap();
    ensure!(resumed.ok == 100 && resumed.reused == 99, "{resumed:?}");
    ensure!(rows[63].status == RowStatus::Ok && rows[63].translation == records[63].completion, "row 63 not completed");
    Ok("100 prompts with 10 injected 429s and 1 permanent failure: 99 ok + 1 error in order; resume completed row 63".into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("template bit-exactness", templates_criterion),
        ("metric oracle equivalence", metrics_criterion),
        ("filtering recipe", filtering_criterion),
        ("mixing policies", mixing_criterion),
        ("hallucination analysis", hallucination_criterion),
        ("post-processing", postprocess_criterion),
        ("determinism and desk pipeline", determinism_criterion),
        ("manifest fidelity", manifest_criterion),
        ("generation client vs mock server", mock_http_criterion),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
