//! Reader for the `segment_id\tcomet\tkiwi` score files produced by the
//! neural-metric bridge or supplied by users.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::io::IoError;

pub const SCORE_HEADER: &str = "segment_id\tcomet\tkiwi";

/// Scores on the 0-100 display scale.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ExternalScores {
    pub comet: Option<f64>,
    pub kiwi: Option<f64>,
}

pub type ScoreMap = BTreeMap<String, ExternalScores>;

fn parse_cell(cell: &str, line: usize, column: &'static str) -> Result<Option<f64>, MetricError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let value: f64 = cell.parse().map_err(|_| MetricError::Parse {
        line,
        message: format!("{column} value {cell:?} is not a number"),
    })?;
    if !(0.0..=1.0).contains(&value) {
        return Err(MetricError::RangeViolation { line, column, value });
    }
    Ok(Some(value * 100.0))
}

/// Parses score TSV text. Line numbers in errors are 1-based and count the header.
pub fn parse_scores(text: &str) -> Result<ScoreMap, MetricError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == SCORE_HEADER => {}
        Some((_, header)) => {
            return Err(MetricError::Parse {
                line: 1,
                message: format!("expected header {SCORE_HEADER:?}, found {header:?}"),
            })
        }
        None => {
            return Err(MetricError::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    let mut out = ScoreMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 3 {
            return Err(MetricError::Parse {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0];
        if id.is_empty() {
            return Err(MetricError::Parse {
                line,
                message: "empty segment_id".into(),
            });
        }
        let scores = ExternalScores {
            comet: parse_cell(fields[1], line, "comet")?,
            kiwi: parse_cell(fields[2], line, "kiwi")?,
        };
        if out.insert(id.to_string(), scores).is_some() {
            return Err(MetricError::DuplicateId(id.to_string()));
        }
    }
    Ok(out)
}

pub fn ingest_scores(path: &Path) -> Result<ScoreMap, MetricError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::io(path, e))?;
    parse_scores(&text)
}
