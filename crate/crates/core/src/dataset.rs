//! Training and evaluation instruction datasets, plus trainer manifests.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{mixture_iterator, CorpusError, ParallelSegment, Pools};
use crate::fewshot::{self, ExamplePool, FewShotError, MixturePolicy, ShotDraw};
use crate::lang::{LangPair, LanguageNames};
use crate::templates::{self, completion_for, PromptSpec, Shot, TemplateError, TemplateId};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("pair {pair}: {source}")]
    FewShot {
        pair: LangPair,
        #[source]
        source: FewShotError,
    },
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("pair {pair}: example pool overlaps the training pool (id {id:?})")]
    PoolOverlap { pair: LangPair, id: String },
    #[error("insufficient dev pool for {}", format_shortfalls(.0))]
    InsufficientDevPool(Vec<(LangPair, usize, usize)>),
    #[error("{template} cannot hold {shots} shots")]
    UnsupportedShots { template: TemplateId, shots: usize },
    #[error("record {segment_id:?}: {message}")]
    InvalidRecord { segment_id: String, message: String },
}

fn format_shortfalls(items: &[(LangPair, usize, usize)]) -> String {
    items
        .iter()
        .map(|(pair, have, need)| format!("{pair} (have {have}, need {need})"))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// One emitted prompt/completion pair with its sampling metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRecord {
    pub prompt: String,
    pub completion: String,
    pub pair: LangPair,
    pub n_shots: usize,
    pub template: TemplateId,
    pub shot_ids: Vec<String>,
    pub segment_id: String,
    pub split: Split,
}

impl InstructionRecord {
    /// Checks metadata consistency and that the prompt parses back to a
    /// spec agreeing with it.
    pub fn validate(&self, names: &LanguageNames) -> Result<PromptSpec, DatasetError> {
        let fail = |message: String| DatasetError::InvalidRecord {
            segment_id: self.segment_id.clone(),
            message,
        };
        if self.n_shots != self.shot_ids.len() {
            return Err(fail(format!(
                "n_shots {} but {} shot ids",
                self.n_shots,
                self.shot_ids.len()
            )));
        }
        if (self.n_shots == 0) != (self.template == TemplateId::ZeroShot) {
            return Err(fail(format!(
                "template {} inconsistent with {} shots",
                self.template, self.n_shots
            )));
        }
        let spec = templates::parse(&self.prompt).map_err(|e| fail(e.to_string()))?;
        if spec.template != self.template || spec.shots.len() != self.n_shots {
            return Err(fail("prompt disagrees with template metadata".into()));
        }
        let x = names.name(self.pair.src()).map_err(|e| fail(e.to_string()))?;
        let y = names.name(self.pair.tgt()).map_err(|e| fail(e.to_string()))?;
        if spec.source_language != x || spec.target_language != y {
            return Err(fail(format!(
                "prompt languages {} -> {} do not match pair {}",
                spec.source_language, spec.target_language, self.pair
            )));
        }
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    /// Layout used for records with at least one shot.
    pub few_shot_template: TemplateId,
    pub names: LanguageNames,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            few_shot_template: TemplateId::DEFAULT_FEW_SHOT,
            names: LanguageNames::new(),
        }
    }
}

fn make_record(
    seg: &ParallelSegment,
    draw: ShotDraw,
    pool: &ExamplePool<'_>,
    opts: &BuildOptions,
    completion: String,
    split: Split,
) -> Result<InstructionRecord, DatasetError> {
    let shots = draw
        .examples
        .iter()
        .map(|id| {
            let ex = pool.get(id).expect("drawn ids come from the pool");
            Shot {
                source: ex.src_text.clone(),
                target: ex.tgt_text.clone(),
            }
        })
        .collect();
    let template = if draw.n_shots == 0 {
        TemplateId::ZeroShot
    } else {
        opts.few_shot_template
    };
    let spec = PromptSpec::for_pair(template, &seg.pair, &opts.names, seg.src_text.clone(), shots)?;
    Ok(InstructionRecord {
        prompt: templates::render(&spec)?,
        completion,
        pair: seg.pair.clone(),
        n_shots: draw.n_shots,
        template,
        shot_ids: draw.examples,
        segment_id: seg.id.clone(),
        split,
    })
}

/// Builds `n_records` training records by mixing pairs uniformly and
/// attaching shots from each pair's held-out example pool.
pub fn build_training_set(
    pools: &Pools,
    policy: &MixturePolicy,
    n_records: usize,
    seed: u64,
    opts: &BuildOptions,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    if !opts.few_shot_template.is_few_shot() {
        return Err(DatasetError::UnsupportedShots {
            template: opts.few_shot_template,
            shots: policy.max_shots,
        });
    }
    let mut example_pools = BTreeMap::new();
    for (pair, p) in pools {
        if p.training.is_empty() {
            continue;
        }
        let examples = ExamplePool::new(&p.examples).map_err(|source| DatasetError::FewShot {
            pair: pair.clone(),
            source,
        })?;
        if let Some(seg) = p.training.iter().find(|s| examples.get(&s.id).is_some()) {
            return Err(DatasetError::PoolOverlap {
                pair: pair.clone(),
                id: seg.id.clone(),
            });
        }
        example_pools.insert(pair, examples);
    }

    let draws: Vec<_> = mixture_iterator(
        pools.iter().map(|(pair, p)| (pair, p.training.as_slice())),
        seed,
    )?
    .take(n_records)
    .collect();

    draws
        .into_par_iter()
        .enumerate()
        .map(|(i, (pair, seg))| {
            let pool = &example_pools[pair];
            let mut rng = fewshot::training_rng(seed, &seg.id, i as u64);
            let draw = fewshot::draw_training_shots(policy, pool, &seg.id, &mut rng).map_err(
                |source| DatasetError::FewShot {
                    pair: pair.clone(),
                    source,
                },
            )?;
            make_record(seg, draw, pool, opts, completion_for(seg), Split::Train)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub build: BuildOptions,
    /// Shot settings, one record per test segment per entry.
    pub shots: Vec<usize>,
    /// Leave `completion` empty for blind submission files.
    pub strip_references: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            build: BuildOptions::default(),
            shots: vec![0, 5],
            strip_references: false,
        }
    }
}

/// Groups segments by language pair, preserving input order within a pair.
pub fn group_by_pair(segments: &[ParallelSegment]) -> BTreeMap<LangPair, Vec<ParallelSegment>> {
    let mut out: BTreeMap<LangPair, Vec<ParallelSegment>> = BTreeMap::new();
    for seg in segments {
        out.entry(seg.pair.clone()).or_default().push(seg.clone());
    }
    out
}

/// Builds evaluation records: one per test segment per shot setting, with
/// few-shot examples drawn from the same pair's dev pool. `completion`
/// carries the plain reference text unless references are stripped.
pub fn build_eval_set(
    test_segments: &[ParallelSegment],
    dev_pools: &BTreeMap<LangPair, Vec<ParallelSegment>>,
    seed: u64,
    opts: &EvalOptions,
) -> Result<Vec<InstructionRecord>, DatasetError> {
    let max_k = opts.shots.iter().copied().max().unwrap_or(0);
    for &k in &opts.shots {
        if k > templates::MAX_SHOTS || (k > 0 && !opts.build.few_shot_template.is_few_shot()) {
            return Err(DatasetError::UnsupportedShots {
                template: opts.build.few_shot_template,
                shots: k,
            });
        }
    }

    let empty: Vec<ParallelSegment> = Vec::new();
    let mut pools = BTreeMap::new();
    let mut shortfalls = Vec::new();
    let pairs: HashSet<&LangPair> = test_segments.iter().map(|s| &s.pair).collect();
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort();
    for pair in pairs {
        let segs = dev_pools.get(pair).unwrap_or(&empty);
        if max_k > 0 && segs.len() < max_k + 1 {
            shortfalls.push((pair.clone(), segs.len(), max_k + 1));
            continue;
        }
        let pool = ExamplePool::new(segs).map_err(|source| DatasetError::FewShot {
            pair: pair.clone(),
            source,
        })?;
        pools.insert(pair.clone(), pool);
    }
    if !shortfalls.is_empty() {
        return Err(DatasetError::InsufficientDevPool(shortfalls));
    }

    let per_segment: Vec<Vec<InstructionRecord>> = test_segments
        .par_iter()
        .map(|seg| {
            let pool = &pools[&seg.pair];
            let completion = if opts.strip_references {
                String::new()
            } else {
                seg.tgt_text.clone()
            };
            opts.shots
                .iter()
                .map(|&k| {
                    let draw = if k == 0 {
                        ShotDraw {
                            n_shots: 0,
                            examples: vec![],
                        }
                    } else {
                        let mut rng = fewshot::eval_rng(seed, &seg.id);
                        fewshot::draw_eval_shots(pool, &seg.id, k, &mut rng).map_err(|source| {
                            DatasetError::FewShot {
                                pair: seg.pair.clone(),
                                source,
                            }
                        })?
                    };
                    make_record(seg, draw, pool, &opts.build, completion.clone(), Split::Test)
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok(per_segment.into_iter().flatten().collect())
}

// ---------------------------------------------------------------------------
// Trainer manifests
// ---------------------------------------------------------------------------

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMethod {
    Lora,
    FullFt,
}

impl fmt::Display for TrainingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrainingMethod::Lora => "lora",
            TrainingMethod::FullFt => "full_ft",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    Linear,
    Constant,
}

/// Hyperparameters handed to an external trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingManifest {
    pub schema_version: u32,
    pub method: TrainingMethod,
    pub optimizer: String,
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub warmup_steps: u32,
    pub batch_size: u32,
    pub weight_decay: f64,
    pub label_smoothing: Option<f64>,
    pub lora_r: Option<u32>,
    pub lora_alpha: Option<u32>,
    pub dropout: Option<f64>,
}

pub const DEFAULT_LORA_R: u32 = 256;

pub fn emit_manifest(method: TrainingMethod, lora_r: Option<u32>) -> TrainingManifest {
    match method {
        TrainingMethod::Lora => {
            let r = lora_r.unwrap_or(DEFAULT_LORA_R);
            TrainingManifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                method,
                optimizer: "AdamW".into(),
                learning_rate: 2e-4,
                scheduler: Scheduler::Linear,
                warmup_steps: 500,
                batch_size: 8,
                weight_decay: 0.0,
                // Best value from the hyperparameter search.
                label_smoothing: Some(0.01),
                lora_r: Some(r),
                lora_alpha: Some(2 * r),
                dropout: Some(0.05),
            }
        }
        TrainingMethod::FullFt => TrainingManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            method,
            optimizer: "AdamW".into(),
            learning_rate: 1e-6,
            scheduler: Scheduler::Constant,
            warmup_steps: 0,
            batch_size: 256,
            weight_decay: 0.0,
            label_smoothing: None,
            lora_r: None,
            lora_alpha: None,
            dropout: None,
        },
    }
}

impl TrainingManifest {
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        if !(self.learning_rate > 0.0) {
            return Err("learning_rate must be positive".into());
        }
        if self.batch_size == 0 {
            return Err("batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.weight_decay) {
            return Err("weight_decay must be in [0,1)".into());
        }
        if let Some(ls) = self.label_smoothing {
            if !(0.0..1.0).contains(&ls) {
                return Err("label_smoothing must be in [0,1)".into());
            }
        }
        match self.method {
            TrainingMethod::Lora => {
                let (Some(r), Some(alpha), Some(dropout)) = (self.lora_r, self.lora_alpha, self.dropout)
                else {
                    return Err("lora manifests need lora_r, lora_alpha and dropout".into());
                };
                if r == 0 || alpha != 2 * r {
                    return Err(format!("lora_alpha {alpha} must equal 2 * lora_r ({r})"));
                }
                if !(0.0..1.0).contains(&dropout) {
                    return Err("dropout must be in [0,1)".into());
                }
            }
            TrainingMethod::FullFt => {
                if self.lora_r.is_some() || self.lora_alpha.is_some() {
                    return Err("full_ft manifests carry no LoRA fields".into());
                }
            }
        }
        Ok(())
    }

    /// Parses and validates a manifest document.
    pub fn from_json(text: &str) -> Result<Self, String> {
        let m: TrainingManifest = serde_json::from_str(text).map_err(|e| e.to_string())?;
        m.validate()?;
        Ok(m)
    }
}
