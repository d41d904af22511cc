mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::{cli, data, desk_config, snapshot, translations};
use mtkit::dataset::InstructionRecord;
use mtkit::io::read_jsonl;
use mtkit::mock::{MockResponder, MockServer};
use serde_json::Value;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn offline_stages(cfg: &Path, out: &Path) {
    let pairs = data("hallucination.csv");
    assert_eq!(cli(&["filter", "--config", s(cfg)]), 0);
    assert_eq!(cli(&["build-train", "--config", s(cfg)]), 0);
    assert_eq!(cli(&["build-eval", "--config", s(cfg)]), 0);
    let reports = out.join("fixture-reports");
    assert_eq!(
        cli(&["analyze", "--config", s(cfg), "--pairs", s(&pairs), "--hallucination", "--out", s(&reports)]),
        0
    );
}

#[test]
fn offline_stages_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), 7);
    let out = dir.path();
    offline_stages(&cfg, out);
    let first: Vec<_> = snapshot(out).into_iter().filter(|(n, _)| n != "config.json").collect();
    for entry in fs::read_dir(out).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            fs::remove_dir_all(p).unwrap();
        } else if p.file_name().unwrap() != "config.json" {
            fs::remove_file(p).unwrap();
        }
    }
    offline_stages(&cfg, out);
    let second: Vec<_> = snapshot(out).into_iter().filter(|(n, _)| n != "config.json").collect();
    assert!(first.len() > 10, "{:?}", first.iter().map(|f| &f.0).collect::<Vec<_>>());
    assert_eq!(first.iter().map(|f| &f.0).collect::<Vec<_>>(), second.iter().map(|f| &f.0).collect::<Vec<_>>());
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        assert!(a == b, "{name} differs between runs");
    }

    // A different seed changes the sampled data.
    let other = tempfile::tempdir().unwrap();
    let cfg2 = desk_config(other.path(), 8);
    assert_eq!(cli(&["build-eval", "--config", s(&cfg2)]), 0);
    assert_ne!(fs::read(out.join("eval.jsonl")).unwrap(), fs::read(other.path().join("eval.jsonl")).unwrap());
}

fn jsonl_lines(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn run_records_report_actual_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), 3);
    assert_eq!(cli(&["filter", "--config", s(&cfg)]), 0);
    assert_eq!(cli(&["build-train", "--config", s(&cfg), "--n-records", "300"]), 0);
    let pools = dir.path().join("pools");
    let record: Value = serde_json::from_str(&fs::read_to_string(pools.join("run.filter.json")).unwrap()).unwrap();
    assert_eq!(record["seed"], 3);
    assert_eq!(record["config_hash"].as_str().unwrap().len(), 64);
    let counts = record["row_counts"].as_object().unwrap();
    for (name, n) in counts {
        let file = pools.join(format!("{name}.jsonl"));
        assert_eq!(jsonl_lines(&file) as u64, n.as_u64().unwrap(), "{name}");
    }
    let train: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.build-train.json")).unwrap()).unwrap();
    assert_eq!(train["row_counts"]["records"], 300);
    assert_eq!(jsonl_lines(&dir.path().join("train.jsonl")), 300);
    // The flag overrode the config, so the effective config hash differs.
    assert_ne!(train["config_hash"], record["config_hash"]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(&["frobnicate"]), 1);
    assert_eq!(cli(&["--help"]), 0);
    assert_eq!(cli(&["--version"]), 0);
    assert_eq!(cli(&["filter", "--config", s(&dir.path().join("missing.json"))]), 1);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"seed": 1, "filter": {"kiwi_min": "x"}}"#).unwrap();
    assert_eq!(cli(&["filter", "--config", s(&bad)]), 1);
    fs::write(&bad, r#"{"filter": {}}"#).unwrap();
    assert_eq!(cli(&["filter", "--config", s(&bad)]), 1, "seed is mandatory");

    let cfg = desk_config(dir.path(), 1);
    assert_eq!(cli(&["filter", "--config", s(&cfg), "--corpus", s(&dir.path().join("nope.tsv"))]), 1);

    // Nothing listens on a port we just released: a runtime failure.
    let url = MockServer::start(MockResponder::echo()).unwrap().url();
    assert_eq!(cli(&["build-eval", "--config", s(&cfg)]), 0);
    assert_eq!(cli(&["generate", "--config", s(&cfg), "--url", &url]), 2);

    assert_eq!(cli(&["manifest", "--method", "full-ft", "--lora-r", "8"]), 1);
    let m = dir.path().join("lora.json");
    assert_eq!(cli(&["manifest", "--out", s(&m)]), 0);
    assert_eq!(cli(&["manifest", "--check", s(&m)]), 0);
    fs::write(&m, "{}").unwrap();
    assert_eq!(cli(&["manifest", "--check", s(&m)]), 1);
}

#[test]
fn end_to_end_desk_pipeline() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = desk_config(dir.path(), 7);
    let out = dir.path();
    assert_eq!(cli(&["filter", "--config", s(&cfg)]), 0);
    assert_eq!(cli(&["build-train", "--config", s(&cfg)]), 0);
    assert_eq!(jsonl_lines(&out.join("train.jsonl")), 2000);
    assert_eq!(cli(&["build-eval", "--config", s(&cfg)]), 0);

    let records: Vec<InstructionRecord> = read_jsonl(&out.join("eval.jsonl")).unwrap();
    let server = MockServer::start(MockResponder::reference(translations(&records)).overgenerating()).unwrap();
    server.inject_rate_limits(3);
    assert_eq!(cli(&["generate", "--config", s(&cfg), "--url", &server.url()]), 0);
    assert_eq!(cli(&["score", "--config", s(&cfg), "--emit-triples", s(&out.join("triples.jsonl"))]), 0);
    let reports = out.join("reports");
    let gens = format!("desk={}", out.join("generations.jsonl").display());
    assert_eq!(
        cli(&[
            "analyze",
            "--config",
            s(&cfg),
            "--evaluations",
            s(&reports.join("evaluations.jsonl")),
            "--metric-report",
            s(&reports.join("metrics.csv")),
            "--generations",
            &gens,
        ]),
        0
    );
    for f in [
        "metrics.csv",
        "evaluations.jsonl",
        "hallucination.csv",
        "hallucination_table.csv",
        "aggregate.csv",
        "table.csv",
        "lengths_summary.csv",
        "deltas.desk.5shot.csv",
        "run.analyze.json",
    ] {
        assert!(reports.join(f).exists(), "{f}");
    }
    let table = fs::read_to_string(reports.join("table.csv")).unwrap();
    assert!(table.starts_with("pair,model,context,COMET,COMETKiwi,BLEU,chrF\n"));
    assert_eq!(table.lines().count(), 1 + 4 * 2);
    // The mock returns references and truncation removes the continuation.
    assert!(table.lines().skip(1).all(|l| l.ends_with(",100.00,100.00")), "{table}");
    let lengths = fs::read_to_string(reports.join("lengths_summary.csv")).unwrap();
    assert!(lengths.lines().nth(1).unwrap().contains(",1.0,"), "{lengths}");
    let elapsed = start.elapsed();
    assert!(elapsed < Duration::from_secs(60), "{elapsed:?}");
}
