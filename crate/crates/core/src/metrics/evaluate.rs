//! Per-segment evaluation records and the long-format metric report.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bleu::{self, BleuConfig, BleuStats};
use super::chrf::{self, ChrfStats};
use super::scores::ScoreMap;
use super::tokenize::BleuTokenizer;
use super::MetricError;
use crate::io::{read_csv, write_atomic};
use crate::lang::LangPair;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Comet,
    Kiwi,
    Bleu,
    Chrf,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Comet, Metric::Kiwi, Metric::Bleu, Metric::Chrf];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Comet => "comet",
            Metric::Kiwi => "kiwi",
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
        }
    }

    /// Column label used in pivoted tables.
    pub fn label(self) -> &'static str {
        match self {
            Metric::Comet => "COMET",
            Metric::Kiwi => "COMETKiwi",
            Metric::Bleu => "BLEU",
            Metric::Chrf => "chrF",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.label() == s)
            .ok_or_else(|| format!("unknown metric {s:?}"))
    }
}

/// One hypothesis to be scored.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInput {
    pub segment_id: String,
    pub pair: LangPair,
    pub domain: Option<String>,
    pub shots: usize,
    pub source: String,
    pub reference: String,
    pub hypothesis: String,
}

impl EvalInput {
    /// Key under which external scores for this row are looked up first.
    /// The same segment appears once per shot setting, so the bare id is
    /// only used as a fallback.
    pub fn score_key(&self) -> String {
        format!("{}#{}", self.segment_id, self.shots)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEvaluation {
    pub segment_id: String,
    pub system: String,
    pub pair: LangPair,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    pub shots: usize,
    pub bleu_sent: f64,
    pub chrf_sent: f64,
    pub comet: Option<f64>,
    pub kiwi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypothesis: Option<String>,
}

impl SegmentEvaluation {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Comet => self.comet,
            Metric::Kiwi => self.kiwi,
            Metric::Bleu => Some(self.bleu_sent),
            Metric::Chrf => Some(self.chrf_sent),
        }
    }
}

/// Row of the long-format report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub system: String,
    pub pair: LangPair,
    pub shots: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Default)]
struct GroupAcc {
    bleu: BleuStats,
    chrf: ChrfStats,
    comet: (f64, usize),
    kiwi: (f64, usize),
}

/// Scores every input at segment level and aggregates corpus-level rows per
/// (pair, shots). Corpus BLEU and chrF come from summed statistics; COMET
/// and COMETKiwi rows are means over the segments that carry a score.
pub fn evaluate(system: &str, inputs: &[EvalInput], scores: Option<&ScoreMap>) -> (Vec<SegmentEvaluation>, Vec<MetricRow>) {
    let per_segment: Vec<(SegmentEvaluation, BleuStats, ChrfStats)> = inputs
        .par_iter()
        .map(|inp| {
            let tok = BleuTokenizer::for_target(inp.pair.tgt().as_str());
            let bstats = bleu::segment_stats(&inp.hypothesis, &inp.reference, tok);
            let cstats = chrf::segment_stats(&inp.hypothesis, &inp.reference);
            let ext = scores
                .and_then(|m| m.get(&inp.score_key()).or_else(|| m.get(&inp.segment_id)))
                .copied()
                .unwrap_or_default();
            let eval = SegmentEvaluation {
                segment_id: inp.segment_id.clone(),
                system: system.to_string(),
                pair: inp.pair.clone(),
                domain: inp.domain.clone(),
                shots: inp.shots,
                bleu_sent: bleu::score_from_stats(&bstats, &BleuConfig::sentence()).score,
                chrf_sent: chrf::score_from_stats(&cstats),
                comet: ext.comet,
                kiwi: ext.kiwi,
                source: Some(inp.source.clone()),
                reference: Some(inp.reference.clone()),
                hypothesis: Some(inp.hypothesis.clone()),
            };
            (eval, bstats, cstats)
        })
        .collect();

    let mut groups: BTreeMap<(LangPair, usize), GroupAcc> = BTreeMap::new();
    for (eval, b, c) in &per_segment {
        let acc = groups.entry((eval.pair.clone(), eval.shots)).or_default();
        acc.bleu += *b;
        acc.chrf += *c;
        if let Some(v) = eval.comet {
            acc.comet.0 += v;
            acc.comet.1 += 1;
        }
        if let Some(v) = eval.kiwi {
            acc.kiwi.0 += v;
            acc.kiwi.1 += 1;
        }
    }
    let mut rows = Vec::new();
    for ((pair, shots), acc) in groups {
        let tok = BleuTokenizer::for_target(pair.tgt().as_str());
        let mut push = |metric, value| {
            rows.push(MetricRow {
                system: system.to_string(),
                pair: pair.clone(),
                shots,
                metric,
                value,
            })
        };
        if acc.comet.1 > 0 {
            push(Metric::Comet, acc.comet.0 / acc.comet.1 as f64);
        }
        if acc.kiwi.1 > 0 {
            push(Metric::Kiwi, acc.kiwi.0 / acc.kiwi.1 as f64);
        }
        push(
            Metric::Bleu,
            bleu::score_from_stats(&acc.bleu, &BleuConfig::corpus().with_tokenizer(tok)).score,
        );
        push(Metric::Chrf, chrf::score_from_stats(&acc.chrf));
    }
    (per_segment.into_iter().map(|(e, _, _)| e).collect(), rows)
}

/// Signature lines written at the top of every metric report.
pub fn report_signatures() -> Vec<String> {
    vec![
        format!("bleu: {}", BleuConfig::corpus().signature()),
        format!(
            "bleu[zh]: {}",
            BleuConfig::corpus().with_tokenizer(BleuTokenizer::Zh).signature()
        ),
        format!("sentence_bleu: {}", BleuConfig::sentence().signature()),
        format!("chrf: {}", chrf::signature()),
    ]
}

pub fn write_metric_report(path: &Path, rows: &[MetricRow]) -> Result<(), MetricError> {
    write_atomic(path, |w| {
        for line in report_signatures() {
            writeln!(w, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        for row in rows {
            csv.serialize(row)?;
        }
        csv.flush()
    })
    .map_err(MetricError::from)
}

pub fn read_metric_report(path: &Path) -> Result<Vec<MetricRow>, MetricError> {
    Ok(read_csv(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ExternalScores;

    fn input(id: &str, shots: usize, hyp: &str, reference: &str) -> EvalInput {
        EvalInput {
            segment_id: id.into(),
            pair: "de-en".parse().unwrap(),
            domain: None,
            shots,
            source: "quelle".into(),
            reference: reference.into(),
            hypothesis: hyp.into(),
        }
    }

    #[test]
    fn evaluate_groups_by_shots_and_uses_keyed_scores() {
        let inputs = vec![
            input("a", 0, "the cat sat on the mat", "the cat sat on the mat"),
            input("a", 5, "a dog", "the cat sat on the mat"),
        ];
        let mut scores = ScoreMap::new();
        scores.insert("a#0".into(), ExternalScores { comet: Some(90.0), kiwi: None });
        scores.insert("a".into(), ExternalScores { comet: Some(10.0), kiwi: None });
        let (evals, rows) = evaluate("sys", &inputs, Some(&scores));
        assert_eq!(evals[0].comet, Some(90.0));
        assert_eq!(evals[1].comet, Some(10.0));
        assert_eq!(evals[0].bleu_sent, 100.0);
        let bleu0 = rows.iter().find(|r| r.shots == 0 && r.metric == Metric::Bleu).unwrap();
        assert_eq!(bleu0.value, 100.0);
        assert_eq!(rows.iter().filter(|r| r.metric == Metric::Kiwi).count(), 0);
    }

    #[test]
    fn report_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let (_, rows) = evaluate("sys", &[input("a", 0, "x y", "x y z")], None);
        write_metric_report(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# bleu: nrefs:1|case:mixed|eff:no|tok:13a|smooth:none|version:"));
        assert!(text.contains("system,pair,shots,metric,value"));
        assert_eq!(read_metric_report(&path).unwrap(), rows);
    }
}
