//! Corpus- and sentence-level BLEU.
//!
//! Statistics are additive, so corpus BLEU is a sum over per-segment
//! [`BleuStats`] followed by a single score computation. Defaults mirror the
//! community scorer: corpus BLEU is unsmoothed, sentence BLEU uses
//! exponential smoothing with effective n-gram order.

use std::collections::HashMap;
use std::iter::Sum;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::{py_split, BleuTokenizer};
use super::{check_corpus, MetricError, VERSION_TAG};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BleuStats {
    pub sys_len: u64,
    pub ref_len: u64,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        self.sys_len += o.sys_len;
        self.ref_len += o.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += o.correct[n];
            self.total[n] += o.total[n];
        }
    }
}

impl Add for BleuStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

impl Sum for BleuStats {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    /// NIST geometric decay for zero-count orders.
    Exp,
    /// Replace zero counts with a small constant.
    Floor(f64),
}

impl Smoothing {
    fn name(self) -> &'static str {
        match self {
            Smoothing::None => "none",
            Smoothing::Exp => "exp",
            Smoothing::Floor(_) => "floor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuConfig {
    pub tokenizer: BleuTokenizer,
    pub smoothing: Smoothing,
    pub effective_order: bool,
}

impl BleuConfig {
    pub fn corpus() -> Self {
        Self {
            tokenizer: BleuTokenizer::Mteval13a,
            smoothing: Smoothing::None,
            effective_order: false,
        }
    }

    pub fn sentence() -> Self {
        Self {
            tokenizer: BleuTokenizer::Mteval13a,
            smoothing: Smoothing::Exp,
            effective_order: true,
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: BleuTokenizer) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn signature(&self) -> String {
        let mut sig = format!(
            "nrefs:1|case:mixed|eff:{}|tok:{}|smooth:{}",
            if self.effective_order { "yes" } else { "no" },
            self.tokenizer.name(),
            self.smoothing.name()
        );
        if let Smoothing::Floor(v) = self.smoothing {
            sig.push_str(&format!("[{v:.2}]"));
        }
        sig.push_str(&format!("|version:{VERSION_TAG}"));
        sig
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub sys_len: u64,
    pub ref_len: u64,
}

fn ngram_counts<'a>(tokens: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], u64> {
    let mut counts: HashMap<&[&str], u64> = HashMap::new();
    for w in tokens.windows(n) {
        *counts.entry(w).or_default() += 1;
    }
    counts
}

fn preprocess(text: &str, tokenizer: BleuTokenizer) -> String {
    tokenizer.tokenize(text.trim_end_matches(super::tokenize::is_py_space))
}

/// Sufficient statistics for one hypothesis/reference pair.
pub fn segment_stats(hyp: &str, reference: &str, tokenizer: BleuTokenizer) -> BleuStats {
    let hyp = preprocess(hyp, tokenizer);
    let reference = preprocess(reference, tokenizer);
    let h: Vec<&str> = py_split(&hyp).collect();
    let r: Vec<&str> = py_split(&reference).collect();
    let mut stats = BleuStats {
        sys_len: h.len() as u64,
        ref_len: r.len() as u64,
        ..BleuStats::default()
    };
    for n in 1..=MAX_ORDER {
        if h.len() < n {
            break;
        }
        let hc = ngram_counts(&h, n);
        let rc = ngram_counts(&r, n);
        stats.total[n - 1] = (h.len() + 1 - n) as u64;
        stats.correct[n - 1] = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
    }
    stats
}

/// Turns aggregated statistics into a score.
pub fn score_from_stats(stats: &BleuStats, cfg: &BleuConfig) -> BleuScore {
    let (sys_len, ref_len) = (stats.sys_len, stats.ref_len);
    let bp = if sys_len < ref_len {
        if sys_len > 0 {
            (1.0 - ref_len as f64 / sys_len as f64).exp()
        } else {
            0.0
        }
    } else {
        1.0
    };
    let mut precisions = [0.0; MAX_ORDER];
    let zero = BleuScore {
        score: 0.0,
        precisions,
        brevity_penalty: bp,
        sys_len,
        ref_len,
    };
    if stats.correct.iter().all(|&c| c == 0) {
        return zero;
    }

    let mut smooth_mteval = 1.0;
    let mut eff_order = MAX_ORDER;
    for n in 1..=MAX_ORDER {
        let (correct, total) = (stats.correct[n - 1], stats.total[n - 1]);
        if total == 0 {
            break;
        }
        if cfg.effective_order {
            eff_order = n;
        }
        precisions[n - 1] = if correct == 0 {
            match cfg.smoothing {
                Smoothing::Exp => {
                    smooth_mteval *= 2.0;
                    100.0 / (smooth_mteval * total as f64)
                }
                Smoothing::Floor(v) => 100.0 * v / total as f64,
                Smoothing::None => 0.0,
            }
        } else {
            100.0 * correct as f64 / total as f64
        };
    }

    let used = &precisions[..eff_order];
    let geo_mean = if used.iter().any(|&p| p == 0.0) {
        0.0
    } else if used.iter().all(|&p| p == used[0]) {
        used[0]
    } else {
        (used.iter().map(|p| p.ln()).sum::<f64>() / eff_order as f64).exp()
    };
    BleuScore {
        score: (bp * geo_mean).clamp(0.0, 100.0),
        precisions,
        ..zero
    }
}

/// Corpus BLEU with explicit configuration.
pub fn corpus_bleu_with(
    hyps: &[impl AsRef<str> + Sync],
    refs: &[impl AsRef<str> + Sync],
    cfg: &BleuConfig,
) -> Result<BleuScore, MetricError> {
    check_corpus(hyps.len(), refs.len())?;
    let stats: BleuStats = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| segment_stats(h.as_ref(), r.as_ref(), cfg.tokenizer))
        .reduce(BleuStats::default, Add::add);
    Ok(score_from_stats(&stats, cfg))
}

/// Corpus BLEU: 13a tokenization, no smoothing.
pub fn corpus_bleu(
    hyps: &[impl AsRef<str> + Sync],
    refs: &[impl AsRef<str> + Sync],
) -> Result<f64, MetricError> {
    corpus_bleu_with(hyps, refs, &BleuConfig::corpus()).map(|s| s.score)
}

pub fn sentence_bleu_with(hyp: &str, reference: &str, cfg: &BleuConfig) -> f64 {
    score_from_stats(&segment_stats(hyp, reference, cfg.tokenizer), cfg).score
}

/// Sentence BLEU: 13a tokenization, exponential smoothing, effective order.
pub fn sentence_bleu(hyp: &str, reference: &str) -> f64 {
    sentence_bleu_with(hyp, reference, &BleuConfig::sentence())
}
