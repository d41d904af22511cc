//! Diagnostic analyses over evaluated systems: zero- vs few-shot deltas,
//! hallucination under perturbation, output length distributions, and
//! aggregated score tables.

mod aggregate;
mod deltas;
mod hallucination;
mod lengths;

use thiserror::Error;

pub use aggregate::{
    aggregate_from_metric_rows, aggregate_report, context_label, pivot, read_aggregate_csv, read_pivot_csv,
    write_aggregate_csv, write_pivot_csv,
    AggregateRow, PivotRow,
};
pub use deltas::{compute_deltas, DeltaOutput, DeltaRecord, HistogramBin, InspectionRow, DEFAULT_TOP_K};
pub use hallucination::{
    domain_order, hallucination_rate, pair_sentence_bleu, read_hallucination_csv, write_hallucination_csv,
    write_hallucination_table, HallucinationGroup, HallucinationInput, HallucinationReport, Thresholds,
    TABLE_DOMAINS,
};
pub use lengths::{length_distribution, LengthBin, LengthReport, LengthSummary, REFERENCE_SERIES};

use crate::io::IoError;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("segment ids differ between the two sets: missing from few-shot {missing_few:?}, missing from zero-shot {missing_zero:?}")]
    IdMismatch {
        missing_few: Vec<String>,
        missing_zero: Vec<String>,
    },
    #[error("duplicate segment id {0:?}")]
    DuplicateId(String),
    #[error("segments without a {metric} score: {ids:?}")]
    MissingScore { metric: String, ids: Vec<String> },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Rate rendered as a percentage with two decimals, or `n/a` when undefined.
pub fn format_rate(rate: Option<f64>) -> String {
    rate.map_or_else(|| "n/a".to_string(), |r| format!("{:.2}%", r * 100.0))
}

/// Order-independent mean: values are sorted before summation so the
/// result does not depend on input order.
pub(crate) fn stable_mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}
