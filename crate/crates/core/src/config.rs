//! Run configuration shared by all CLI subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::FilterConfig;
use crate::fewshot::MixturePolicy;
use crate::generation::{DecodingConfig, EndpointConfig};
use crate::lang::LanguageNames;
use crate::templates::TemplateId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config error at {pointer}: {message}")]
    Schema { pointer: String, message: String },
    #[error("config error at {pointer}: {message}")]
    Invalid { pointer: String, message: String },
}

impl ConfigError {
    fn invalid(pointer: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            pointer: pointer.to_string(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus_in: Option<PathBuf>,
    pub pools_out: Option<PathBuf>,
    pub dataset_out: Option<PathBuf>,
    pub dev_in: Option<PathBuf>,
    pub test_in: Option<PathBuf>,
    pub eval_out: Option<PathBuf>,
    pub generations_out: Option<PathBuf>,
    pub scores_in: Option<PathBuf>,
    pub reports_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Training records to emit; defaults to `per_pair_cap` times the number of pairs.
    pub n_records: Option<usize>,
    pub few_shot_template: TemplateId,
    pub eval_shots: Vec<usize>,
    pub strip_references: bool,
    /// Extra or overriding display names, keyed by language code.
    pub language_names: BTreeMap<String, String>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_records: None,
            few_shot_template: TemplateId::DEFAULT_FEW_SHOT,
            eval_shots: vec![0, 5],
            strip_references: false,
            language_names: BTreeMap::new(),
        }
    }
}

impl DatasetConfig {
    pub fn names(&self) -> LanguageNames {
        let mut names = LanguageNames::new();
        names.extend(self.language_names.clone());
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// System label attached to scored generations.
    pub system: String,
    pub hallucination_hi: f64,
    pub hallucination_lo: f64,
    pub top_k: usize,
    pub length_bin_width: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            system: "system".into(),
            hallucination_hi: 30.0,
            hallucination_lo: 3.0,
            top_k: crate::analysis::DEFAULT_TOP_K,
            length_bin_width: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory: there is no wall-clock default.
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub policy: MixturePolicy,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub endpoint: EndpointConfig,
    #[serde(default)]
    pub decoding: DecodingConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            paths: Paths::default(),
            filter: FilterConfig::default(),
            policy: MixturePolicy::default(),
            dataset: DatasetConfig::default(),
            endpoint: EndpointConfig::default(),
            decoding: DecodingConfig::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Schema {
            pointer: json_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Semantic checks beyond the schema. The filter's own seed is derived
    /// from the top-level seed, so a conflicting value is rejected.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.filter.seed != 0 && self.filter.seed != self.seed {
            return Err(ConfigError::invalid(
                "/filter/seed",
                "must be omitted or equal to the top-level seed",
            ));
        }
        self.filter
            .validate()
            .map_err(|e| ConfigError::invalid("/filter", e.to_string()))?;
        self.policy
            .validate()
            .map_err(|e| ConfigError::invalid("/policy/max_shots", e.to_string()))?;
        if !self.dataset.few_shot_template.is_few_shot() {
            return Err(ConfigError::invalid(
                "/dataset/few_shot_template",
                "must name a few-shot layout",
            ));
        }
        for (i, &k) in self.dataset.eval_shots.iter().enumerate() {
            if k > crate::templates::MAX_SHOTS {
                return Err(ConfigError::invalid(
                    &format!("/dataset/eval_shots/{i}"),
                    format!("{k} exceeds {}", crate::templates::MAX_SHOTS),
                ));
            }
        }
        if self.dataset.eval_shots.is_empty() {
            return Err(ConfigError::invalid("/dataset/eval_shots", "must not be empty"));
        }
        for (code, name) in &self.dataset.language_names {
            crate::lang::LangCode::new(code)
                .map_err(|e| ConfigError::invalid(&format!("/dataset/language_names/{code}"), e.to_string()))?;
            crate::templates::check_slot_text("language name", name)
                .map_err(|e| ConfigError::invalid(&format!("/dataset/language_names/{code}"), e.to_string()))?;
        }
        if self.endpoint.concurrency == 0 {
            return Err(ConfigError::invalid("/endpoint/concurrency", "must be positive"));
        }
        if self.endpoint.max_attempts == 0 {
            return Err(ConfigError::invalid("/endpoint/max_attempts", "must be positive"));
        }
        if !(self.decoding.temperature >= 0.0) {
            return Err(ConfigError::invalid("/decoding/temperature", "must be non-negative"));
        }
        if self.analysis.length_bin_width == 0 {
            return Err(ConfigError::invalid("/analysis/length_bin_width", "must be positive"));
        }
        Ok(())
    }

    /// SHA-256 of the effective configuration's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}
