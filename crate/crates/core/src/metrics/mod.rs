//! BLEU and chrF scoring plus ingestion of externally computed neural scores.

mod bleu;
mod chrf;
mod evaluate;
mod scores;
mod tokenize;

use thiserror::Error;

pub use bleu::{
    corpus_bleu, corpus_bleu_with, score_from_stats as bleu_from_stats, segment_stats as bleu_segment_stats,
    sentence_bleu, sentence_bleu_with, BleuConfig, BleuScore, BleuStats, Smoothing,
};
pub use chrf::{
    corpus_chrf, score_from_stats as chrf_from_stats, segment_stats as chrf_segment_stats, sentence_chrf,
    signature as chrf_signature, ChrfStats,
};
pub use evaluate::{
    evaluate, read_metric_report, write_metric_report, EvalInput, Metric, MetricRow, SegmentEvaluation,
};
pub use scores::{ingest_scores, parse_scores, ExternalScores, ScoreMap, SCORE_HEADER};
pub use tokenize::{is_py_space, py_split, BleuTokenizer};

/// Version tag embedded in metric signatures.
pub const VERSION_TAG: &str = concat!("mtkit-", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("hypothesis count {hyps} does not match reference count {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate_id: {0}")]
    DuplicateId(String),
    #[error("range_violation at line {line}: {column} = {value} is outside [0, 1]")]
    RangeViolation { line: usize, column: &'static str, value: f64 },
    #[error("parse_error{{line={line}}}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
}

pub(crate) fn check_corpus(hyps: usize, refs: usize) -> Result<(), MetricError> {
    if hyps != refs {
        return Err(MetricError::LengthMismatch { hyps, refs });
    }
    if hyps == 0 {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}
