//! Parallel-corpus ingestion, quality filtering, and per-pair pool sampling.
//!
//! A segment survives filtering only when its Bicleaner score and both
//! COMETKiwi directions clear their thresholds. Survivors are sampled per
//! language pair in a single streaming pass: a reservoir holds
//! `per_pair_cap + example_pool_size` segments, which are then shuffled and
//! split into a held-out example pool and a training pool.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_jsonl, write_jsonl_atomic, IoError};
use crate::lang::{LangError, LangPair};
use crate::rng;
use crate::templates::check_slot_text;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("segment {id:?}: {message}")]
    InvalidSegment { id: String, message: String },
    #[error(transparent)]
    Lang(#[from] LangError),
    #[error("filter config: {0}")]
    InvalidConfig(String),
    #[error("empty_mixture: every pool is empty")]
    EmptyMixture,
    #[error(transparent)]
    Io(#[from] IoError),
}

/// One source/target sentence pair with its quality scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SegmentRecord", into = "SegmentRecord")]
pub struct ParallelSegment {
    pub id: String,
    pub pair: LangPair,
    pub src_text: String,
    pub tgt_text: String,
    pub bicleaner: Option<f64>,
    pub kiwi_fwd: Option<f64>,
    pub kiwi_rev: Option<f64>,
    pub domain: String,
}

/// Flat on-disk shape shared by the TSV and JSONL formats.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRecord {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_text: String,
    pub tgt_text: String,
    #[serde(default)]
    pub bicleaner: Option<f64>,
    #[serde(default)]
    pub kiwi_fwd: Option<f64>,
    #[serde(default)]
    pub kiwi_rev: Option<f64>,
    #[serde(default)]
    pub domain: String,
}

impl TryFrom<SegmentRecord> for ParallelSegment {
    type Error = CorpusError;

    fn try_from(r: SegmentRecord) -> Result<Self, Self::Error> {
        let seg = ParallelSegment {
            pair: LangPair::new(&r.src_lang, &r.tgt_lang)?,
            id: r.id,
            src_text: r.src_text,
            tgt_text: r.tgt_text,
            bicleaner: r.bicleaner,
            kiwi_fwd: r.kiwi_fwd,
            kiwi_rev: r.kiwi_rev,
            domain: r.domain,
        };
        seg.validate()?;
        Ok(seg)
    }
}

impl From<ParallelSegment> for SegmentRecord {
    fn from(s: ParallelSegment) -> Self {
        SegmentRecord {
            id: s.id,
            src_lang: s.pair.src().to_string(),
            tgt_lang: s.pair.tgt().to_string(),
            src_text: s.src_text,
            tgt_text: s.tgt_text,
            bicleaner: s.bicleaner,
            kiwi_fwd: s.kiwi_fwd,
            kiwi_rev: s.kiwi_rev,
            domain: s.domain,
        }
    }
}

impl ParallelSegment {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: String| CorpusError::InvalidSegment {
            id: self.id.clone(),
            message,
        };
        if self.id.is_empty() {
            return Err(fail("empty id".into()));
        }
        for (field, text) in [("src_text", &self.src_text), ("tgt_text", &self.tgt_text)] {
            check_slot_text(field, text).map_err(|e| fail(e.to_string()))?;
        }
        for (field, score) in [
            ("bicleaner", self.bicleaner),
            ("kiwi_fwd", self.kiwi_fwd),
            ("kiwi_rev", self.kiwi_rev),
        ] {
            if let Some(v) = score {
                if !(0.0..=1.0).contains(&v) {
                    return Err(fail(format!("{field} score {v} outside [0,1]")));
                }
            }
        }
        Ok(())
    }
}

/// How a score is compared against its threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdRule {
    /// `score >= threshold`
    #[default]
    AtLeast,
    /// `score > threshold`
    Above,
}

impl ThresholdRule {
    fn passes(self, score: f64, threshold: f64) -> bool {
        match self {
            ThresholdRule::AtLeast => score >= threshold,
            ThresholdRule::Above => score > threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub bicleaner_min: f64,
    pub kiwi_min: f64,
    pub per_pair_cap: usize,
    pub example_pool_size: usize,
    pub rule: ThresholdRule,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            bicleaner_min: 0.85,
            kiwi_min: 0.80,
            per_pair_cap: 250_000,
            example_pool_size: 5_000,
            rule: ThresholdRule::AtLeast,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        for (name, v) in [("bicleaner_min", self.bicleaner_min), ("kiwi_min", self.kiwi_min)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CorpusError::InvalidConfig(format!("{name}={v} outside [0,1]")));
            }
        }
        if self.per_pair_cap == 0 {
            return Err(CorpusError::InvalidConfig("per_pair_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    BicleanerLow,
    KiwiFwdLow,
    KiwiRevLow,
    MissingScore,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::BicleanerLow => "bicleaner_low",
            DropReason::KiwiFwdLow => "kiwi_fwd_low",
            DropReason::KiwiRevLow => "kiwi_rev_low",
            DropReason::MissingScore => "missing_score",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

impl FilterDecision {
    pub fn is_keep(self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Conjunctive quality filter. An absent score always drops the segment.
pub fn filter_segment(seg: &ParallelSegment, cfg: &FilterConfig) -> FilterDecision {
    filter_scores(seg.bicleaner, seg.kiwi_fwd, seg.kiwi_rev, cfg)
}

pub fn filter_scores(
    bicleaner: Option<f64>,
    kiwi_fwd: Option<f64>,
    kiwi_rev: Option<f64>,
    cfg: &FilterConfig,
) -> FilterDecision {
    let (Some(b), Some(f), Some(r)) = (bicleaner, kiwi_fwd, kiwi_rev) else {
        return FilterDecision::Drop(DropReason::MissingScore);
    };
    if !cfg.rule.passes(b, cfg.bicleaner_min) {
        FilterDecision::Drop(DropReason::BicleanerLow)
    } else if !cfg.rule.passes(f, cfg.kiwi_min) {
        FilterDecision::Drop(DropReason::KiwiFwdLow)
    } else if !cfg.rule.passes(r, cfg.kiwi_min) {
        FilterDecision::Drop(DropReason::KiwiRevLow)
    } else {
        FilterDecision::Keep
    }
}

// ---------------------------------------------------------------------------
// Input readers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "tsv" => Some(CorpusFormat::Tsv),
            "jsonl" | "json" => Some(CorpusFormat::Jsonl),
            _ => None,
        }
    }
}

/// A line that could not be turned into a valid segment.
#[derive(Debug, Clone, PartialEq)]
pub struct BadLine {
    pub line: usize,
    pub message: String,
}

pub const TSV_COLUMNS: [&str; 9] = [
    "id", "src_lang", "tgt_lang", "src_text", "tgt_text", "bicleaner", "kiwi_fwd", "kiwi_rev",
    "domain",
];

/// Streams segments from a TSV (with header) or JSONL source.
pub fn read_segments<R: Read + 'static>(
    reader: R,
    format: CorpusFormat,
) -> Box<dyn Iterator<Item = Result<ParallelSegment, BadLine>>> {
    match format {
        CorpusFormat::Jsonl => Box::new(
            BufReader::new(reader)
                .lines()
                .enumerate()
                .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true))
                .map(|(i, line)| {
                    let line_no = i + 1;
                    let line = line.map_err(|e| BadLine {
                        line: line_no,
                        message: e.to_string(),
                    })?;
                    serde_json::from_str::<ParallelSegment>(&line).map_err(|e| BadLine {
                        line: line_no,
                        message: e.to_string(),
                    })
                }),
        ),
        CorpusFormat::Tsv => {
            let rdr = csv::ReaderBuilder::new()
                .delimiter(b'\t')
                .quoting(false)
                .has_headers(true)
                .from_reader(reader);
            Box::new(
                rdr.into_deserialize::<SegmentRecord>()
                    .enumerate()
                    .map(|(i, rec)| {
                        let line_no = i + 2;
                        let rec = rec.map_err(|e| BadLine {
                            line: line_no,
                            message: e.to_string(),
                        })?;
                        ParallelSegment::try_from(rec).map_err(|e| BadLine {
                            line: line_no,
                            message: e.to_string(),
                        })
                    }),
            )
        }
    }
}

pub fn open_segments(
    path: &Path,
    format: Option<CorpusFormat>,
) -> Result<Box<dyn Iterator<Item = Result<ParallelSegment, BadLine>>>, CorpusError> {
    let format = format
        .or_else(|| CorpusFormat::from_path(path))
        .ok_or_else(|| {
            CorpusError::InvalidConfig(format!(
                "cannot infer corpus format of {} (use .tsv or .jsonl)",
                path.display()
            ))
        })?;
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(read_segments(file, format))
}

/// Reads every segment, failing on the first malformed line.
pub fn load_segments(path: &Path) -> Result<Vec<ParallelSegment>, CorpusError> {
    open_segments(path, None)?
        .map(|r| {
            r.map_err(|bad| {
                CorpusError::Io(IoError::Parse {
                    path: path.to_path_buf(),
                    line: bad.line,
                    message: bad.message,
                })
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Pool sampling
// ---------------------------------------------------------------------------

/// Diagnostic emitted on the warnings stream, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    EmptyPool { pair: LangPair, seen: u64 },
    EmptyTrainingPool { pair: LangPair, survivors: u64 },
    InvalidSegment { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairStats {
    pub seen: u64,
    pub kept: u64,
    pub bicleaner_low: u64,
    pub kiwi_fwd_low: u64,
    pub kiwi_rev_low: u64,
    pub missing_score: u64,
}

impl PairStats {
    fn record(&mut self, decision: FilterDecision) {
        self.seen += 1;
        match decision {
            FilterDecision::Keep => self.kept += 1,
            FilterDecision::Drop(DropReason::BicleanerLow) => self.bicleaner_low += 1,
            FilterDecision::Drop(DropReason::KiwiFwdLow) => self.kiwi_fwd_low += 1,
            FilterDecision::Drop(DropReason::KiwiRevLow) => self.kiwi_rev_low += 1,
            FilterDecision::Drop(DropReason::MissingScore) => self.missing_score += 1,
        }
    }
}

/// Training and held-out example pools for one language pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairPools {
    pub training: Vec<ParallelSegment>,
    pub examples: Vec<ParallelSegment>,
}

pub type Pools = BTreeMap<LangPair, PairPools>;

#[derive(Debug, Clone, Default)]
pub struct SampleOutcome {
    pub pools: Pools,
    pub stats: BTreeMap<LangPair, PairStats>,
    pub warnings: Vec<Warning>,
}

struct Reservoir {
    rng: rng::StreamRng,
    capacity: usize,
    survivors: u64,
    items: Vec<(u64, ParallelSegment)>,
}

impl Reservoir {
    fn new(seed: u64, pair: &LangPair, capacity: usize) -> Self {
        Self {
            rng: rng::derive(seed, &["pool", &pair.to_string()]),
            capacity,
            survivors: 0,
            items: Vec::new(),
        }
    }

    fn offer(&mut self, seq: u64, seg: ParallelSegment) {
        let t = self.survivors;
        self.survivors += 1;
        if self.items.len() < self.capacity {
            self.items.push((seq, seg));
        } else {
            let j = self.rng.random_range(0..=t);
            if (j as usize) < self.capacity {
                self.items[j as usize] = (seq, seg);
            }
        }
    }

    fn split(mut self, holdout: usize) -> PairPools {
        self.items.shuffle(&mut self.rng);
        let cut = holdout.min(self.items.len());
        let mut training = self.items.split_off(cut);
        let mut examples = self.items;
        examples.sort_by_key(|(seq, _)| *seq);
        training.sort_by_key(|(seq, _)| *seq);
        PairPools {
            training: training.into_iter().map(|(_, s)| s).collect(),
            examples: examples.into_iter().map(|(_, s)| s).collect(),
        }
    }
}

/// Filters a segment stream and samples per-pair training and example pools.
///
/// Output depends only on `cfg.seed` and the input order.
pub fn sample_pool<I>(segments: I, cfg: &FilterConfig) -> Result<SampleOutcome, CorpusError>
where
    I: IntoIterator<Item = Result<ParallelSegment, BadLine>>,
{
    cfg.validate()?;
    let capacity = cfg.per_pair_cap.saturating_add(cfg.example_pool_size);
    let mut reservoirs: BTreeMap<LangPair, Reservoir> = BTreeMap::new();
    let mut outcome = SampleOutcome::default();

    for (seq, item) in segments.into_iter().enumerate() {
        let seg = match item {
            Ok(seg) => seg,
            Err(bad) => {
                outcome.warnings.push(Warning::InvalidSegment {
                    line: bad.line,
                    message: bad.message,
                });
                continue;
            }
        };
        let decision = filter_segment(&seg, cfg);
        outcome
            .stats
            .entry(seg.pair.clone())
            .or_default()
            .record(decision);
        let reservoir = reservoirs
            .entry(seg.pair.clone())
            .or_insert_with(|| Reservoir::new(cfg.seed, &seg.pair, capacity));
        if decision.is_keep() {
            reservoir.offer(seq as u64, seg);
        }
    }

    for (pair, reservoir) in reservoirs {
        let survivors = reservoir.survivors;
        let pools = reservoir.split(cfg.example_pool_size);
        if survivors == 0 {
            let seen = outcome.stats.get(&pair).map_or(0, |s| s.seen);
            outcome.warnings.push(Warning::EmptyPool {
                pair: pair.clone(),
                seen,
            });
        } else if pools.training.is_empty() {
            outcome.warnings.push(Warning::EmptyTrainingPool {
                pair: pair.clone(),
                survivors,
            });
        }
        outcome.pools.insert(pair, pools);
    }
    Ok(outcome)
}

fn pool_file(dir: &Path, kind: &str, pair: &LangPair) -> PathBuf {
    dir.join(format!("{kind}.{pair}.jsonl"))
}

/// Writes `train.<pair>.jsonl` and `examples.<pair>.jsonl` for every pair.
pub fn write_pools(dir: &Path, pools: &Pools) -> Result<BTreeMap<String, usize>, CorpusError> {
    let mut counts = BTreeMap::new();
    for (pair, p) in pools {
        let n = write_jsonl_atomic(&pool_file(dir, "train", pair), &p.training)?;
        counts.insert(format!("train.{pair}"), n);
        let n = write_jsonl_atomic(&pool_file(dir, "examples", pair), &p.examples)?;
        counts.insert(format!("examples.{pair}"), n);
    }
    Ok(counts)
}

/// Loads pools previously written by [`write_pools`].
pub fn read_pools(dir: &Path) -> Result<Pools, CorpusError> {
    let mut pools = Pools::new();
    let entries = fs::read_dir(dir).map_err(|e| IoError::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    for name in names {
        let Some(stem) = name.strip_suffix(".jsonl") else {
            continue;
        };
        let (kind, pair) = match stem.split_once('.') {
            Some((k @ ("train" | "examples"), p)) => (k, p),
            _ => continue,
        };
        let pair: LangPair = pair.parse()?;
        let rows: Vec<ParallelSegment> = read_jsonl(&dir.join(&name))?;
        let entry = pools.entry(pair).or_default();
        if kind == "train" {
            entry.training = rows;
        } else {
            entry.examples = rows;
        }
    }
    Ok(pools)
}

// ---------------------------------------------------------------------------
// Pair mixing
// ---------------------------------------------------------------------------

/// Infinite stream that picks a pair uniformly among nonempty pools, then a
/// segment uniformly within that pair's pool.
pub struct MixtureIter<'a> {
    pools: Vec<(&'a LangPair, &'a [ParallelSegment])>,
    rng: rng::StreamRng,
}

pub fn mixture_iterator<'a>(
    pools: impl IntoIterator<Item = (&'a LangPair, &'a [ParallelSegment])>,
    seed: u64,
) -> Result<MixtureIter<'a>, CorpusError> {
    let pools: Vec<_> = pools.into_iter().filter(|(_, p)| !p.is_empty()).collect();
    if pools.is_empty() {
        return Err(CorpusError::EmptyMixture);
    }
    Ok(MixtureIter {
        pools,
        rng: rng::derive(seed, &["mixture"]),
    })
}

impl<'a> Iterator for MixtureIter<'a> {
    type Item = (&'a LangPair, &'a ParallelSegment);

    fn next(&mut self) -> Option<Self::Item> {
        let (pair, pool) = self.pools[self.rng.random_range(0..self.pools.len())];
        let seg = &pool[self.rng.random_range(0..pool.len())];
        Some((pair, seg))
    }
}
