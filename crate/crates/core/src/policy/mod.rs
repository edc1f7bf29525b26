//! Weight-conditioned navigation policy.

pub mod expert;
pub mod features;
pub mod net;
mod rollout;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use expert::expert_action;
pub use features::{extract, FEATURE_DIM, FEATURE_VERSION};
pub use net::{EncoderMode, Network, Shapes, N_ACTIONS};
pub use rollout::{log_prob, rollout, rollout_many, trajectory_steps, Sampling};
pub use train::{train, AdvantageNormalization, training_houses, BatchStats, TrainConfig, Trainer, WeightSampling};

use crate::env::{EnvConfig, TaskSpec};
use crate::error::{Error, Result};
use crate::objectives::TaskKind;
use crate::rng::RngSeed;
use crate::weights::Weights;

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub task: TaskKind,
    pub net: Network,
}

impl Policy {
    pub fn new(task: TaskKind, mode: EncoderMode, hidden: usize, seed: RngSeed) -> Policy {
        let mut rng = seed.derive_named("init", 0).stream();
        Policy { task, net: Network::new(task.k(), mode, hidden, FEATURE_DIM, &mut rng) }
    }

    pub fn k(&self) -> usize {
        self.task.k()
    }

    pub(crate) fn check_task(&self, task: &TaskSpec) -> Result<()> {
        if task.kind != self.task {
            return Err(Error::invalid(format!("policy was trained for {}, not {}", self.task, task.kind)));
        }
        Ok(())
    }

    pub fn encode_weights(&self, w: &Weights<f64>) -> Result<Vec<f64>> {
        Ok(self.net.embed(w.as_slice())?.values)
    }

    pub fn action_distribution(&self, feats: &[f64], w: &Weights<f64>) -> Result<[f64; N_ACTIONS]> {
        if feats.len() != FEATURE_DIM || feats.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("features must be finite with the expected length"));
        }
        let emb = self.net.embed(w.as_slice())?;
        Ok(self.net.forward(feats, &emb.values).probs)
    }

    /// Summed log-probability of precomputed `(features, action)` steps.
    pub fn log_prob_steps(&self, steps: &[(Vec<f64>, usize)], w: &Weights<f64>) -> Result<f64> {
        let emb = self.net.embed(w.as_slice())?;
        Ok(steps.iter().map(|(x, a)| self.net.forward(x, &emb.values).log_probs[*a]).sum())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamBlocks {
    pub encoder: Vec<f64>,
    pub policy: Vec<f64>,
    pub value: Vec<f64>,
}

/// Checkpoint file contents.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Checkpoint {
    pub task: TaskKind,
    #[serde(rename = "K")]
    pub k: usize,
    pub feature_version: u32,
    pub encoder_mode: EncoderMode,
    pub hidden: usize,
    pub params: ParamBlocks,
    pub house: EnvConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_config: Option<TrainConfig>,
    pub episodes: usize,
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, house: &EnvConfig, train_config: Option<&TrainConfig>, episodes: usize) -> Self {
        let s = &policy.net.shapes;
        let p = &policy.net.params;
        Checkpoint {
            task: policy.task,
            k: s.k,
            feature_version: FEATURE_VERSION,
            encoder_mode: s.mode,
            hidden: s.hidden,
            params: ParamBlocks {
                encoder: p[s.encoder_range()].to_vec(),
                policy: p[s.policy_range()].to_vec(),
                value: p[s.value_range()].to_vec(),
            },
            house: house.clone(),
            train_config: train_config.cloned(),
            episodes,
        }
    }

    pub fn policy(&self) -> Result<Policy> {
        if self.feature_version != FEATURE_VERSION {
            return Err(Error::invalid(format!(
                "checkpoint uses feature version {}, this build uses {}",
                self.feature_version, FEATURE_VERSION
            )));
        }
        if self.k != self.task.k() {
            return Err(Error::ArityMismatch { expected: self.task.k(), found: self.k });
        }
        let shapes = Shapes::new(self.k, self.encoder_mode, self.hidden, FEATURE_DIM);
        let mut params = self.params.encoder.clone();
        params.extend_from_slice(&self.params.policy);
        params.extend_from_slice(&self.params.value);
        Ok(Policy { task: self.task, net: Network::from_params(shapes, params)? })
    }

    pub fn read(path: &Path) -> Result<Checkpoint> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }
}
