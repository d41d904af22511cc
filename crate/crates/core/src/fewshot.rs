//! In-context example sampling for training mixtures and evaluation prompts.

use std::collections::HashMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::ParallelSegment;
use crate::rng::{self, StreamRng};
use crate::templates::MAX_SHOTS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FewShotError {
    #[error("insufficient_examples: {available} candidates, {required} required")]
    InsufficientExamples { available: usize, required: usize },
    #[error("duplicate example id {0:?}")]
    DuplicateId(String),
    #[error("max_shots must be between 1 and {MAX_SHOTS}, got {0}")]
    InvalidMaxShots(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureVariant {
    /// Shot count uniform over `0..=max_shots`.
    #[default]
    Balanced,
    /// Half the records zero-shot, the rest uniform over `1..=max_shots`.
    Unbalanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixturePolicy {
    pub variant: MixtureVariant,
    pub max_shots: usize,
}

impl Default for MixturePolicy {
    fn default() -> Self {
        Self {
            variant: MixtureVariant::Balanced,
            max_shots: MAX_SHOTS,
        }
    }
}

impl MixturePolicy {
    pub fn balanced() -> Self {
        Self::default()
    }

    pub fn unbalanced() -> Self {
        Self {
            variant: MixtureVariant::Unbalanced,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FewShotError> {
        if !(1..=MAX_SHOTS).contains(&self.max_shots) {
            return Err(FewShotError::InvalidMaxShots(self.max_shots));
        }
        Ok(())
    }

    /// Probability of each shot count `0..=max_shots`.
    pub fn probabilities(&self) -> Vec<f64> {
        let k = self.max_shots;
        match self.variant {
            MixtureVariant::Balanced => vec![1.0 / (k + 1) as f64; k + 1],
            MixtureVariant::Unbalanced => std::iter::once(0.5)
                .chain(std::iter::repeat_n(0.5 / k as f64, k))
                .collect(),
        }
    }

    pub fn sample_count<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self.variant {
            MixtureVariant::Balanced => rng.random_range(0..=self.max_shots),
            MixtureVariant::Unbalanced => {
                if rng.random_bool(0.5) {
                    0
                } else {
                    rng.random_range(1..=self.max_shots)
                }
            }
        }
    }
}

/// Shots chosen for one target segment, in draw order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotDraw {
    pub n_shots: usize,
    pub examples: Vec<String>,
}

/// Read-only view over a pair's example pool with id lookup.
#[derive(Debug, Clone)]
pub struct ExamplePool<'a> {
    segments: &'a [ParallelSegment],
    by_id: HashMap<&'a str, usize>,
}

impl<'a> ExamplePool<'a> {
    pub fn new(segments: &'a [ParallelSegment]) -> Result<Self, FewShotError> {
        let mut by_id = HashMap::with_capacity(segments.len());
        for (i, seg) in segments.iter().enumerate() {
            if by_id.insert(seg.id.as_str(), i).is_some() {
                return Err(FewShotError::DuplicateId(seg.id.clone()));
            }
        }
        Ok(Self { segments, by_id })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&'a ParallelSegment> {
        self.by_id.get(id).map(|&i| &self.segments[i])
    }

    pub fn segments(&self) -> &'a [ParallelSegment] {
        self.segments
    }

    fn candidates(&self, target_id: &str) -> (usize, Option<usize>) {
        let excluded = self.by_id.get(target_id).copied();
        (self.segments.len() - usize::from(excluded.is_some()), excluded)
    }

    /// Uniform sample of `n` distinct segments, never including `target_id`.
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R, target_id: &str, n: usize) -> Vec<String> {
        let (available, excluded) = self.candidates(target_id);
        index::sample(rng, available, n)
            .into_iter()
            .map(|i| match excluded {
                Some(x) if i >= x => i + 1,
                _ => i,
            })
            .map(|i| self.segments[i].id.clone())
            .collect()
    }
}

/// Draws training shots: a shot count from `policy`, then that many
/// examples uniformly without replacement.
pub fn draw_training_shots<R: Rng + ?Sized>(
    policy: &MixturePolicy,
    pool: &ExamplePool<'_>,
    target_id: &str,
    rng: &mut R,
) -> Result<ShotDraw, FewShotError> {
    policy.validate()?;
    let (available, _) = pool.candidates(target_id);
    if available < policy.max_shots {
        return Err(FewShotError::InsufficientExamples {
            available,
            required: policy.max_shots,
        });
    }
    let n = policy.sample_count(rng);
    Ok(ShotDraw {
        n_shots: n,
        examples: pool.sample(rng, target_id, n),
    })
}

/// Draws exactly `k` evaluation shots, excluding the target itself.
pub fn draw_eval_shots<R: Rng + ?Sized>(
    pool: &ExamplePool<'_>,
    target_id: &str,
    k: usize,
    rng: &mut R,
) -> Result<ShotDraw, FewShotError> {
    let (available, _) = pool.candidates(target_id);
    if available < k {
        return Err(FewShotError::InsufficientExamples {
            available,
            required: k,
        });
    }
    Ok(ShotDraw {
        n_shots: k,
        examples: pool.sample(rng, target_id, k),
    })
}

/// RNG for the shots of the `ordinal`-th training record built from `segment_id`.
pub fn training_rng(seed: u64, segment_id: &str, ordinal: u64) -> StreamRng {
    rng::derive(seed, &["train-shots", segment_id, &ordinal.to_string()])
}

/// RNG for the evaluation shots of `segment_id`.
pub fn eval_rng(seed: u64, segment_id: &str) -> StreamRng {
    rng::derive(seed, &["eval-shots", segment_id])
}
