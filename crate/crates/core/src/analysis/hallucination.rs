use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{format_rate, AnalysisError};
use crate::io::{read_csv, write_atomic, write_csv_atomic};
use crate::lang::LangPair;
use crate::metrics::SegmentEvaluation;

/// Canonical row order of the hallucination table; other domains follow
/// alphabetically.
pub const TABLE_DOMAINS: [&str; 5] = ["Flores", "Medical", "Law", "Tico", "Chat"];

const ALL: &str = "all";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub hi: f64,
    pub lo: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self { hi: 30.0, lo: 3.0 }
    }
}

impl Thresholds {
    /// Strictly above `hi` without examples and strictly below `lo` with them.
    pub fn flags(&self, zero_bleu: f64, few_bleu: f64) -> bool {
        zero_bleu > self.hi && few_bleu < self.lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HallucinationInput {
    pub segment_id: String,
    pub domain: String,
    pub system: String,
    pub pair: LangPair,
    pub zero_bleu: f64,
    pub few_bleu: f64,
}

/// Counts for one grouping. Keys equal to `"all"` are aggregated over.
#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationGroup {
    pub domain: String,
    pub system: String,
    pub pair: String,
    pub n_segments: usize,
    pub n_flagged: usize,
}

impl HallucinationGroup {
    /// `None` for an empty group.
    pub fn rate(&self) -> Option<f64> {
        (self.n_segments > 0).then(|| self.n_flagged as f64 / self.n_segments as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GroupCsvRow {
    domain: String,
    system: String,
    pair: String,
    n_segments: usize,
    n_flagged: usize,
    rate: String,
    hi: f64,
    lo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HallucinationReport {
    pub thresholds: Thresholds,
    /// Groups at the (domain, system, pair), (domain, system), (system) and
    /// overall levels, in deterministic order.
    pub groups: Vec<HallucinationGroup>,
    /// `(system, segment_id)` of every flagged segment.
    pub flagged: Vec<(String, String)>,
}

impl HallucinationReport {
    pub fn group(&self, domain: &str, system: &str, pair: &str) -> Option<&HallucinationGroup> {
        self.groups
            .iter()
            .find(|g| g.domain == domain && g.system == system && g.pair == pair)
    }

    pub fn overall(&self) -> &HallucinationGroup {
        self.group(ALL, ALL, ALL).expect("overall group always present")
    }
}

/// Sort key placing the canonical domains first.
pub fn domain_order(domain: &str) -> (usize, String) {
    let pos = TABLE_DOMAINS
        .iter()
        .position(|d| d.eq_ignore_ascii_case(domain))
        .unwrap_or(TABLE_DOMAINS.len());
    (pos, domain.to_string())
}

pub fn hallucination_rate(inputs: &[HallucinationInput], thresholds: Thresholds) -> HallucinationReport {
    let mut counts: BTreeMap<(String, String, String), (usize, usize)> = BTreeMap::new();
    let mut flagged = Vec::new();
    counts.insert((ALL.into(), ALL.into(), ALL.into()), (0, 0));
    for inp in inputs {
        let hit = thresholds.flags(inp.zero_bleu, inp.few_bleu);
        if hit {
            flagged.push((inp.system.clone(), inp.segment_id.clone()));
        }
        let pair = inp.pair.to_string();
        for key in [
            (inp.domain.as_str(), inp.system.as_str(), pair.as_str()),
            (inp.domain.as_str(), inp.system.as_str(), ALL),
            (ALL, inp.system.as_str(), ALL),
            (ALL, ALL, ALL),
        ] {
            let c = counts
                .entry((key.0.to_string(), key.1.to_string(), key.2.to_string()))
                .or_default();
            c.0 += 1;
            c.1 += usize::from(hit);
        }
    }
    flagged.sort();
    let mut groups: Vec<HallucinationGroup> = counts
        .into_iter()
        .map(|((domain, system, pair), (n, f))| HallucinationGroup {
            domain,
            system,
            pair,
            n_segments: n,
            n_flagged: f,
        })
        .collect();
    groups.sort_by(|a, b| {
        let key = |g: &HallucinationGroup| (g.domain == ALL, domain_order(&g.domain), g.system == ALL, g.system.clone(), g.pair == ALL, g.pair.clone());
        key(a).cmp(&key(b))
    });
    HallucinationReport {
        thresholds,
        groups,
        flagged,
    }
}

/// Matches each system's zero-shot sentence BLEU with its few-shot score
/// for the same segment.
pub fn pair_sentence_bleu(evals: &[SegmentEvaluation]) -> Result<Vec<HallucinationInput>, AnalysisError> {
    let mut zero: HashMap<(&str, &str), &SegmentEvaluation> = HashMap::new();
    let mut few: BTreeMap<(&str, &str), &SegmentEvaluation> = BTreeMap::new();
    for e in evals {
        let key = (e.system.as_str(), e.segment_id.as_str());
        let slot = if e.shots == 0 { zero.insert(key, e) } else { few.insert(key, e) };
        if slot.is_some() {
            return Err(AnalysisError::DuplicateId(format!(
                "{}/{} ({} shots)",
                e.system, e.segment_id, e.shots
            )));
        }
    }
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for (key, f) in &few {
        match zero.remove(key) {
            Some(z) => out.push(HallucinationInput {
                segment_id: z.segment_id.clone(),
                domain: z.domain.clone().unwrap_or_else(|| "unknown".into()),
                system: z.system.clone(),
                pair: z.pair.clone(),
                zero_bleu: z.bleu_sent,
                few_bleu: f.bleu_sent,
            }),
            None => missing.push(format!("{}/{}", key.0, key.1)),
        }
    }
    let mut missing_few: Vec<String> = zero.keys().map(|(s, id)| format!("{s}/{id}")).collect();
    if !missing.is_empty() || !missing_few.is_empty() {
        missing.sort();
        missing_few.sort();
        return Err(AnalysisError::IdMismatch {
            missing_few,
            missing_zero: missing,
        });
    }
    Ok(out)
}

/// Long-format CSV with every group and its rate.
pub fn write_hallucination_csv(path: &Path, report: &HallucinationReport) -> Result<(), AnalysisError> {
    let rows: Vec<GroupCsvRow> = report
        .groups
        .iter()
        .map(|g| GroupCsvRow {
            domain: g.domain.clone(),
            system: g.system.clone(),
            pair: g.pair.clone(),
            n_segments: g.n_segments,
            n_flagged: g.n_flagged,
            rate: format_rate(g.rate()),
            hi: report.thresholds.hi,
            lo: report.thresholds.lo,
        })
        .collect();
    write_csv_atomic(path, &rows)?;
    Ok(())
}

pub fn read_hallucination_csv(path: &Path) -> Result<HallucinationReport, AnalysisError> {
    let rows: Vec<GroupCsvRow> = read_csv(path)?;
    let thresholds = rows
        .first()
        .map_or_else(Thresholds::default, |r| Thresholds { hi: r.hi, lo: r.lo });
    let groups = rows
        .into_iter()
        .map(|r| HallucinationGroup {
            domain: r.domain,
            system: r.system,
            pair: r.pair,
            n_segments: r.n_segments,
            n_flagged: r.n_flagged,
        })
        .collect();
    Ok(HallucinationReport {
        thresholds,
        groups,
        flagged: Vec::new(),
    })
}

/// Domains-by-systems table of percentages. The canonical domains always
/// appear, with `n/a` where no segments were seen.
pub fn write_hallucination_table(path: &Path, report: &HallucinationReport) -> Result<(), AnalysisError> {
    let systems: BTreeSet<&str> = report
        .groups
        .iter()
        .filter(|g| g.system != ALL)
        .map(|g| g.system.as_str())
        .collect();
    let mut domains: Vec<String> = TABLE_DOMAINS.iter().map(|d| d.to_string()).collect();
    for g in &report.groups {
        if g.domain != ALL && !domains.iter().any(|d| d.eq_ignore_ascii_case(&g.domain)) {
            domains.push(g.domain.clone());
        }
    }
    domains.sort_by_key(|d| domain_order(d));
    write_atomic(path, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["domain"];
        header.extend(systems.iter().copied());
        csv.write_record(&header)?;
        for d in &domains {
            let mut row = vec![d.clone()];
            for s in &systems {
                let rate = report
                    .groups
                    .iter()
                    .find(|g| g.domain.eq_ignore_ascii_case(d) && g.system == *s && g.pair == ALL)
                    .and_then(HallucinationGroup::rate);
                row.push(format_rate(rate));
            }
            csv.write_record(&row)?;
        }
        csv.flush()
    })?;
    Ok(())
}
