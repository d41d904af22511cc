//! Character n-gram F-score (order 6, beta 2, whitespace ignored).

use std::collections::HashMap;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tokenize::is_py_space;
use super::{check_corpus, MetricError, VERSION_TAG};

pub const CHAR_ORDER: usize = 6;
pub const BETA: f64 = 2.0;

/// Per-order `[hypothesis, reference, matched]` n-gram counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChrfStats {
    pub orders: [[u64; 3]; CHAR_ORDER],
}

impl AddAssign for ChrfStats {
    fn add_assign(&mut self, o: Self) {
        for (a, b) in self.orders.iter_mut().zip(o.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }
}

impl Add for ChrfStats {
    type Output = Self;
    fn add(mut self, o: Self) -> Self {
        self += o;
        self
    }
}

pub fn signature() -> String {
    format!("nrefs:1|case:mixed|eff:yes|nc:{CHAR_ORDER}|nw:0|space:no|version:{VERSION_TAG}")
}

fn char_ngrams(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut counts = HashMap::new();
    for w in chars.windows(n) {
        *counts.entry(w).or_default() += 1;
    }
    counts
}

pub fn segment_stats(hyp: &str, reference: &str) -> ChrfStats {
    let h: Vec<char> = hyp.chars().filter(|&c| !is_py_space(c)).collect();
    let r: Vec<char> = reference.chars().filter(|&c| !is_py_space(c)).collect();
    let mut stats = ChrfStats::default();
    for n in 1..=CHAR_ORDER {
        let hc = char_ngrams(&h, n);
        let rc = char_ngrams(&r, n);
        let matched = hc
            .iter()
            .map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0)))
            .sum();
        stats.orders[n - 1] = [
            h.len().saturating_sub(n - 1) as u64,
            r.len().saturating_sub(n - 1) as u64,
            matched,
        ];
    }
    stats
}

/// Averages precision and recall over orders where both sides have n-grams,
/// then combines them into an F-beta score in [0, 100].
pub fn score_from_stats(stats: &ChrfStats) -> f64 {
    let factor = BETA * BETA;
    let (mut avg_prec, mut avg_rec, mut effective) = (0.0, 0.0, 0);
    for &[n_hyp, n_ref, n_match] in &stats.orders {
        if n_hyp > 0 && n_ref > 0 {
            avg_prec += n_match as f64 / n_hyp as f64;
            avg_rec += n_match as f64 / n_ref as f64;
            effective += 1;
        }
    }
    if effective == 0 {
        return 0.0;
    }
    avg_prec /= effective as f64;
    avg_rec /= effective as f64;
    if avg_prec + avg_rec == 0.0 {
        return 0.0;
    }
    let score = (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec);
    (100.0 * score).clamp(0.0, 100.0)
}

pub fn corpus_chrf(
    hyps: &[impl AsRef<str> + Sync],
    refs: &[impl AsRef<str> + Sync],
) -> Result<f64, MetricError> {
    check_corpus(hyps.len(), refs.len())?;
    let stats = hyps
        .par_iter()
        .zip(refs.par_iter())
        .map(|(h, r)| segment_stats(h.as_ref(), r.as_ref()))
        .reduce(ChrfStats::default, Add::add);
    Ok(score_from_stats(&stats))
}

pub fn sentence_chrf(hyp: &str, reference: &str) -> f64 {
    score_from_stats(&segment_stats(hyp, reference))
}
