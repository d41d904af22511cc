use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{stable_mean, AnalysisError};
use crate::io::{read_csv, write_atomic, write_csv_atomic};
use crate::lang::LangPair;
use crate::metrics::{Metric, MetricRow, SegmentEvaluation};

/// Mean score of one (pair, system, shots, metric) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub pair: LangPair,
    pub system: String,
    pub shots: usize,
    pub metric: Metric,
    pub value: f64,
    /// Number of segments averaged; absent for corpus-level values.
    pub n: Option<usize>,
}

/// One row of the pivoted table: a (pair, model, context) triple with one
/// column per metric.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotRow {
    pub pair: LangPair,
    pub model: String,
    pub context: String,
    pub values: [Option<f64>; 4],
}

const PIVOT_METRICS: [Metric; 4] = [Metric::Comet, Metric::Kiwi, Metric::Bleu, Metric::Chrf];

pub fn context_label(shots: usize) -> String {
    format!("{shots}-shot")
}

/// Segment-level means per (pair, system, shots, metric). Means are
/// independent of input order.
pub fn aggregate_report(evals: &[SegmentEvaluation]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(LangPair, String, usize, Metric), Vec<f64>> = BTreeMap::new();
    for e in evals {
        for metric in Metric::ALL {
            if let Some(v) = e.get(metric) {
                cells
                    .entry((e.pair.clone(), e.system.clone(), e.shots, metric))
                    .or_default()
                    .push(v);
            }
        }
    }
    cells
        .into_iter()
        .map(|((pair, system, shots, metric), mut values)| AggregateRow {
            pair,
            system,
            shots,
            metric,
            n: Some(values.len()),
            value: stable_mean(&mut values).expect("cells are nonempty"),
        })
        .collect()
}

/// Corpus-level rows from a metric report, in aggregate form.
pub fn aggregate_from_metric_rows(rows: &[MetricRow]) -> Vec<AggregateRow> {
    let mut out: Vec<AggregateRow> = rows
        .iter()
        .map(|r| AggregateRow {
            pair: r.pair.clone(),
            system: r.system.clone(),
            shots: r.shots,
            metric: r.metric,
            value: r.value,
            n: None,
        })
        .collect();
    out.sort_by(|a, b| {
        (&a.pair, &a.system, a.shots, a.metric).cmp(&(&b.pair, &b.system, b.shots, b.metric))
    });
    out
}

pub fn pivot(rows: &[AggregateRow]) -> Vec<PivotRow> {
    let mut table: BTreeMap<(LangPair, String, usize), [Option<f64>; 4]> = BTreeMap::new();
    for r in rows {
        let cells = table.entry((r.pair.clone(), r.system.clone(), r.shots)).or_default();
        let col = PIVOT_METRICS.iter().position(|m| *m == r.metric).expect("all metrics pivot");
        cells[col] = Some(r.value);
    }
    table
        .into_iter()
        .map(|((pair, model, shots), values)| PivotRow {
            pair,
            model,
            context: context_label(shots),
            values,
        })
        .collect()
}

pub fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<(), AnalysisError> {
    write_csv_atomic(path, rows)?;
    Ok(())
}

pub fn read_aggregate_csv(path: &Path) -> Result<Vec<AggregateRow>, AnalysisError> {
    Ok(read_csv(path)?)
}

/// Writes the pivot with two-decimal cells and `n/a` for missing ones.
pub fn write_pivot_csv(path: &Path, rows: &[PivotRow]) -> Result<(), AnalysisError> {
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["pair", "model", "context"];
        header.extend(PIVOT_METRICS.iter().map(|m| m.label()));
        csv.write_record(&header)?;
        for r in rows {
            let mut rec = vec![r.pair.to_string(), r.model.clone(), r.context.clone()];
            rec.extend(
                r.values
                    .iter()
                    .map(|v| v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}"))),
            );
            csv.write_record(&rec)?;
        }
        csv.flush()
    })?;
    Ok(())
}

/// Reads a pivot written by [`write_pivot_csv`]; values carry two decimals.
pub fn read_pivot_csv(path: &Path) -> Result<Vec<PivotRow>, AnalysisError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| AnalysisError::Invalid(e.to_string()))?;
    let bad = |m: String| AnalysisError::Invalid(format!("{}: {m}", path.display()));
    let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let expected: Vec<&str> = ["pair", "model", "context"]
        .into_iter()
        .chain(PIVOT_METRICS.iter().map(|m| m.label()))
        .collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let mut values = [None; 4];
        for (i, v) in values.iter_mut().enumerate() {
            let cell = &rec[3 + i];
            *v = match cell {
                "n/a" => None,
                s => Some(s.parse().map_err(|_| bad(format!("bad value {s:?}")))?),
            };
        }
        out.push(PivotRow {
            pair: rec[0].parse().map_err(|e| bad(format!("{e}")))?,
            model: rec[1].to_string(),
            context: rec[2].to_string(),
            values,
        });
    }
    Ok(out)
}
