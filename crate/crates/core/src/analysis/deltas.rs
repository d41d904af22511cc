use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::io::{read_csv, write_csv_atomic, write_jsonl_atomic};
use crate::lang::LangPair;
use crate::metrics::{Metric, SegmentEvaluation};

pub const DEFAULT_TOP_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRecord {
    pub segment_id: String,
    pub pair: LangPair,
    pub domain_tag: Option<String>,
    pub score_zero: f64,
    pub score_few: f64,
    pub delta: f64,
}

/// Counts of deltas in `[bin_start, bin_start + width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_start: f64,
    pub bin_end: f64,
    pub count: usize,
}

/// Full texts of a segment with a large delta, for manual inspection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionRow {
    pub rank: usize,
    pub segment_id: String,
    pub pair: LangPair,
    pub domain_tag: Option<String>,
    pub score_zero: f64,
    pub score_few: f64,
    pub delta: f64,
    pub source: Option<String>,
    pub reference: Option<String>,
    pub hypothesis_zero: Option<String>,
    pub hypothesis_few: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaOutput {
    pub metric: Metric,
    pub records: Vec<DeltaRecord>,
    pub histogram: Vec<HistogramBin>,
    pub top: Vec<InspectionRow>,
}

impl DeltaOutput {
    pub fn write(&self, deltas_csv: &Path, histogram_csv: &Path, inspection_jsonl: &Path) -> Result<(), AnalysisError> {
        write_csv_atomic(deltas_csv, &self.records)?;
        write_csv_atomic(histogram_csv, &self.histogram)?;
        write_jsonl_atomic(inspection_jsonl, &self.top)?;
        Ok(())
    }

    pub fn read_records(path: &Path) -> Result<Vec<DeltaRecord>, AnalysisError> {
        Ok(read_csv(path)?)
    }

    pub fn read_histogram(path: &Path) -> Result<Vec<HistogramBin>, AnalysisError> {
        Ok(read_csv(path)?)
    }
}

fn index<'a>(set: &'a [SegmentEvaluation]) -> Result<HashMap<&'a str, &'a SegmentEvaluation>, AnalysisError> {
    let mut map = HashMap::with_capacity(set.len());
    for e in set {
        if map.insert(e.segment_id.as_str(), e).is_some() {
            return Err(AnalysisError::DuplicateId(e.segment_id.clone()));
        }
    }
    Ok(map)
}

fn score(e: &SegmentEvaluation, metric: Metric, missing: &mut Vec<String>) -> f64 {
    e.get(metric).unwrap_or_else(|| {
        missing.push(e.segment_id.clone());
        f64::NAN
    })
}

/// Pairs zero- and few-shot evaluations by segment id and reports the
/// per-segment score change, a histogram of unit-width bins, and the
/// `top_k` segments with the largest absolute change.
pub fn compute_deltas(
    zero: &[SegmentEvaluation],
    few: &[SegmentEvaluation],
    metric: Metric,
    top_k: usize,
) -> Result<DeltaOutput, AnalysisError> {
    let zero_ix = index(zero)?;
    let few_ix = index(few)?;
    let mut missing_few: Vec<String> = zero_ix
        .keys()
        .filter(|k| !few_ix.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    let mut missing_zero: Vec<String> = few_ix
        .keys()
        .filter(|k| !zero_ix.contains_key(*k))
        .map(|k| k.to_string())
        .collect();
    if !missing_few.is_empty() || !missing_zero.is_empty() {
        missing_few.sort();
        missing_zero.sort();
        return Err(AnalysisError::IdMismatch {
            missing_few,
            missing_zero,
        });
    }

    let mut missing = Vec::new();
    let mut records = Vec::with_capacity(zero.len());
    for z in zero {
        let f = few_ix[z.segment_id.as_str()];
        let (score_zero, score_few) = (score(z, metric, &mut missing), score(f, metric, &mut missing));
        records.push(DeltaRecord {
            segment_id: z.segment_id.clone(),
            pair: z.pair.clone(),
            domain_tag: z.domain.clone(),
            score_zero,
            score_few,
            delta: score_few - score_zero,
        });
    }
    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(AnalysisError::MissingScore {
            metric: metric.to_string(),
            ids: missing,
        });
    }

    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for r in &records {
        *counts.entry(r.delta.floor() as i64).or_default() += 1;
    }
    let histogram = match (counts.keys().next(), counts.keys().next_back()) {
        (Some(&lo), Some(&hi)) => (lo..=hi)
            .map(|b| HistogramBin {
                bin_start: b as f64,
                bin_end: (b + 1) as f64,
                count: counts.get(&b).copied().unwrap_or(0),
            })
            .collect(),
        _ => Vec::new(),
    };

    let mut order: Vec<&DeltaRecord> = records.iter().collect();
    order.sort_by(|a, b| {
        b.delta
            .abs()
            .total_cmp(&a.delta.abs())
            .then_with(|| a.segment_id.cmp(&b.segment_id))
    });
    let top = order
        .into_iter()
        .take(top_k)
        .enumerate()
        .map(|(i, r)| {
            let (z, f) = (zero_ix[r.segment_id.as_str()], few_ix[r.segment_id.as_str()]);
            InspectionRow {
                rank: i + 1,
                segment_id: r.segment_id.clone(),
                pair: r.pair.clone(),
                domain_tag: r.domain_tag.clone(),
                score_zero: r.score_zero,
                score_few: r.score_few,
                delta: r.delta,
                source: z.source.clone(),
                reference: z.reference.clone(),
                hypothesis_zero: z.hypothesis.clone(),
                hypothesis_few: f.hypothesis.clone(),
            }
        })
        .collect();

    Ok(DeltaOutput {
        metric,
        records,
        histogram,
        top,
    })
}
