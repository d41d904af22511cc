//! Helpers shared by the integration tests. Each test binary pulls in only
//! what it needs, hence the blanket dead-code allowance.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use mtkit::corpus::ParallelSegment;
use mtkit::dataset::InstructionRecord;
use mtkit::generation::{CompletionClient, DecodingConfig, EndpointConfig, GenerationMode};
use mtkit::templates::{PromptSpec, TemplateId};

pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

pub fn data(name: &str) -> PathBuf {
    repo_root().join("data").join(name)
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub const GOLDEN_TEMPLATES: [&str; 4] = ["zero_shot", "few_shot_1", "few_shot_2", "few_shot_3"];

pub fn golden(name: &str) -> (PromptSpec, Vec<u8>) {
    let dir = golden_dir();
    let spec = serde_json::from_str(&fs::read_to_string(dir.join(format!("{name}.spec.json"))).unwrap()).unwrap();
    (spec, fs::read(dir.join(format!("{name}.txt"))).unwrap())
}

/// Applies the conjunctive `>= 0.85 / >= 0.80 / >= 0.80` rule to the raw TSV
/// text without going through the library reader. Blank scores fail.
pub fn planted_survivors(tsv: &str) -> BTreeSet<String> {
    let mut lines = tsv.lines();
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (id, b, f, r) = (col("id"), col("bicleaner"), col("kiwi_fwd"), col("kiwi_rev"));
    let ge = |v: &str, t: f64| !v.is_empty() && v.parse::<f64>().unwrap() >= t;
    lines
        .map(|l| l.split('\t').collect::<Vec<_>>())
        .filter(|c| ge(c[b], 0.85) && ge(c[f], 0.80) && ge(c[r], 0.80))
        .map(|c| c[id].to_string())
        .collect()
}

pub fn segment(id: &str, pair: &str, src: &str, tgt: &str) -> ParallelSegment {
    ParallelSegment {
        id: id.into(),
        pair: pair.parse().unwrap(),
        src_text: src.into(),
        tgt_text: tgt.into(),
        bicleaner: Some(0.9),
        kiwi_fwd: Some(0.9),
        kiwi_rev: Some(0.9),
        domain: "Flores".into(),
    }
}

/// `n` zero-shot German-to-English evaluation records with distinct sources.
pub fn zero_shot_records(n: usize) -> Vec<InstructionRecord> {
    (0..n)
        .map(|i| {
            let src = format!("Satz Nummer {i} ist hier");
            let spec = PromptSpec {
                template: TemplateId::ZeroShot,
                source_language: "German".into(),
                target_language: "English".into(),
                source: src,
                shots: vec![],
            };
            InstructionRecord {
                prompt: mtkit::templates::render(&spec).unwrap(),
                completion: format!("Sentence number {i} is here"),
                pair: "de-en".parse().unwrap(),
                n_shots: 0,
                template: TemplateId::ZeroShot,
                shot_ids: vec![],
                segment_id: format!("s{i:03}"),
                split: mtkit::dataset::Split::Test,
            }
        })
        .collect()
}

pub fn translations(records: &[InstructionRecord]) -> HashMap<String, String> {
    records
        .iter()
        .map(|r| {
            let spec = mtkit::templates::parse(&r.prompt).unwrap();
            (spec.source, r.completion.clone())
        })
        .collect()
}

/// Client with millisecond backoff so fault-injection tests stay fast.
pub fn fast_client(url: String, mode: GenerationMode, concurrency: usize) -> CompletionClient {
    let endpoint = EndpointConfig {
        url,
        timeout_secs: 10,
        max_attempts: 5,
        backoff_base_ms: 1,
        backoff_max_ms: 5,
        concurrency,
        ..EndpointConfig::default()
    };
    let decoding = DecodingConfig {
        max_tokens: 64,
        temperature: 0.0,
        mode,
    };
    CompletionClient::new(endpoint, decoding).unwrap()
}

/// Runs the CLI in-process and returns its exit code.
pub fn cli(args: &[&str]) -> i32 {
    let mut argv = vec!["mtkit"];
    argv.extend_from_slice(args);
    mtkit::cli::run(argv)
}

/// Writes a desk config whose relative paths point into `dir`.
pub fn desk_config(dir: &Path, seed: u64) -> PathBuf {
    let mut cfg: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(data("desk.json")).unwrap()).unwrap();
    cfg["seed"] = seed.into();
    let paths = cfg["paths"].as_object_mut().unwrap();
    for (key, value) in paths.iter_mut() {
        let rel = value.as_str().unwrap();
        let abs = if key.ends_with("_in") {
            repo_root().join(rel)
        } else {
            dir.join(rel.trim_start_matches("out/"))
        };
        *value = abs.display().to_string().into();
    }
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

/// Every regular file under `dir`, relative path to contents.
pub fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out
}
