use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::generation::{Finish, GenerationResult, RowStatus};
use crate::io::{read_csv, write_csv_atomic};

/// Series name used for the reference-length histogram.
pub const REFERENCE_SERIES: &str = "reference";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBin {
    pub series: String,
    pub bin_start: usize,
    pub bin_end: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub system: String,
    pub n: usize,
    pub mean_tokens: Option<f64>,
    /// Fraction of rows whose output had to be cut at a newline.
    pub overgeneration_ratio: Option<f64>,
    /// Total variation distance to the reference length distribution.
    pub total_variation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LengthReport {
    pub bin_width: usize,
    pub histograms: Vec<LengthBin>,
    pub summaries: Vec<LengthSummary>,
}

impl LengthReport {
    pub fn write(&self, histogram_csv: &Path, summary_csv: &Path) -> Result<(), AnalysisError> {
        write_csv_atomic(histogram_csv, &self.histograms)?;
        write_csv_atomic(summary_csv, &self.summaries)?;
        Ok(())
    }

    pub fn read_histograms(path: &Path) -> Result<Vec<LengthBin>, AnalysisError> {
        Ok(read_csv(path)?)
    }

    pub fn read_summaries(path: &Path) -> Result<Vec<LengthSummary>, AnalysisError> {
        Ok(read_csv(path)?)
    }
}

fn histogram(lengths: impl IntoIterator<Item = usize>, width: usize) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for l in lengths {
        *h.entry(l / width).or_default() += 1;
    }
    h
}

fn total_variation(a: &BTreeMap<usize, usize>, b: &BTreeMap<usize, usize>) -> Option<f64> {
    let (na, nb) = (a.values().sum::<usize>(), b.values().sum::<usize>());
    if na == 0 || nb == 0 {
        return None;
    }
    let bins: BTreeSet<&usize> = a.keys().chain(b.keys()).collect();
    let sum: f64 = bins
        .into_iter()
        .map(|k| {
            let p = a.get(k).copied().unwrap_or(0) as f64 / na as f64;
            let q = b.get(k).copied().unwrap_or(0) as f64 / nb as f64;
            (p - q).abs()
        })
        .sum();
    Some(sum / 2.0)
}

/// Histograms of translation token counts per system next to the reference
/// lengths. Error rows are left out.
pub fn length_distribution(
    results: &BTreeMap<String, Vec<GenerationResult>>,
    reference_lengths: &[usize],
    bin_width: usize,
) -> Result<LengthReport, AnalysisError> {
    if bin_width == 0 {
        return Err(AnalysisError::Invalid("bin width must be positive".into()));
    }
    let reference = histogram(reference_lengths.iter().copied(), bin_width);
    let mut histograms = Vec::new();
    let mut push = |series: &str, h: &BTreeMap<usize, usize>| {
        histograms.extend(h.iter().map(|(&b, &count)| LengthBin {
            series: series.to_string(),
            bin_start: b * bin_width,
            bin_end: (b + 1) * bin_width,
            count,
        }));
    };
    push(REFERENCE_SERIES, &reference);

    let mut summaries = Vec::new();
    for (system, rows) in results {
        let ok: Vec<&GenerationResult> = rows.iter().filter(|r| r.status == RowStatus::Ok).collect();
        let h = histogram(ok.iter().map(|r| r.translation_token_count), bin_width);
        push(system, &h);
        let n = ok.len();
        let ratio = |count: usize| (n > 0).then(|| count as f64 / n as f64);
        summaries.push(LengthSummary {
            system: system.clone(),
            n,
            mean_tokens: ratio(ok.iter().map(|r| r.translation_token_count).sum()),
            overgeneration_ratio: ratio(
                ok.iter()
                    .filter(|r| r.finish == Some(Finish::NewlineTruncated))
                    .count(),
            ),
            total_variation: total_variation(&h, &reference),
        });
    }
    Ok(LengthReport {
        bin_width,
        histograms,
        summaries,
    })
}
