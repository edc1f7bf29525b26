//! Scalarized policy-gradient training with per-episode weight sampling.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::net::{EncoderMode, N_ACTIONS};
use super::expert::expert_action;
use super::features::extract;
use super::rollout::{choose, run_episode, EpisodeData, Sampling};
use super::{Policy, DEFAULT_HIDDEN};
use crate::env::{generate_house, Action, Env, EnvConfig, HouseLayout, TaskSpec};
use crate::error::{Error, Result};
use crate::objectives::TaskKind;
use crate::rng::RngSeed;
use crate::weights::{scalarize, Weights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightSampling {
    #[default]
    SimplexUniform,
    Fixed {
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageNormalization {
    None,
    Batch,
    /// Per episode, so episodes with large-return weights do not dominate.
    #[default]
    Episode,
}

impl std::str::FromStr for AdvantageNormalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AdvantageNormalization::None),
            "batch" => Ok(AdvantageNormalization::Batch),
            "episode" => Ok(AdvantageNormalization::Episode),
            other => Err(Error::invalid(format!("unknown advantage normalization '{other}'"))),
        }
    }
}

fn standardize(xs: &[&Vec<f64>]) -> (f64, f64) {
    let n: usize = xs.iter().map(|x| x.len()).sum();
    let mean = xs.iter().flat_map(|x| x.iter()).sum::<f64>() / n.max(1) as f64;
    let var = xs.iter().flat_map(|x| x.iter()).map(|a| (a - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
    (mean, var.sqrt() + 1e-8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub episodes_per_batch: usize,
    pub learning_rate: f64,
    pub total_episodes: usize,
    pub gamma: f64,
    /// Advantage mixing: 1 gives Monte Carlo returns minus the baseline,
    /// smaller values bootstrap from the baseline (GAE).
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub weight_sampling: WeightSampling,
    pub encoder: EncoderMode,
    pub hidden: usize,
    /// Unweighted terminal shaping `success_bonus * s - failure_penalty * (1 - s)` with
    /// `s` the episode's success value; a training signal only, never a sub-reward.
    pub success_bonus: f64,
    pub failure_penalty: f64,
    /// Episodes of imitation (expert-labelled, partly learner-driven) run
    /// before policy-gradient training; not counted in `total_episodes`.
    pub imitation_episodes: usize,
    pub imitation_learning_rate: f64,
    /// Label smoothing for imitation targets; keeps the warm-started policy stochastic.
    pub imitation_smoothing: f64,
    pub house: EnvConfig,
    /// Number of distinct training houses.
    pub house_pool: usize,
    pub advantage_normalization: AdvantageNormalization,
    pub max_grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes_per_batch: 64,
            learning_rate: 3e-4,
            total_episodes: 150_000,
            gamma: 0.99,
            gae_lambda: 0.9,
            entropy_coef: 0.02,
            value_coef: 0.5,
            weight_sampling: WeightSampling::SimplexUniform,
            encoder: EncoderMode::Codebook,
            hidden: DEFAULT_HIDDEN,
            success_bonus: 2.0,
            failure_penalty: 0.5,
            imitation_episodes: 6_000,
            imitation_learning_rate: 3e-3,
            imitation_smoothing: 0.1,
            house: EnvConfig::small(),
            house_pool: 64,
            advantage_normalization: AdvantageNormalization::Episode,
            max_grad_norm: 10.0,
            jobs: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite())
            || !(self.imitation_learning_rate > 0.0 && self.imitation_learning_rate.is_finite())
        {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::invalid("gae_lambda must lie in [0, 1]"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::invalid("gamma must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.imitation_smoothing) {
            return Err(Error::invalid("imitation smoothing must lie in [0, 1)"));
        }
        if self.episodes_per_batch == 0 || self.house_pool == 0 || self.hidden == 0 {
            return Err(Error::invalid("batch size, house pool and hidden width must be positive"));
        }
        if let WeightSampling::Fixed { weights } = &self.weight_sampling {
            if weights.len() != task.k() {
                return Err(Error::ArityMismatch { expected: task.k(), found: weights.len() });
            }
            Weights::new(weights.clone())?;
        }
        self.house.validate()
    }
}

/// Summary of one update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub batch: usize,
    pub episodes: usize,
    pub mean_scalarized_return: f64,
    pub mean_sub_returns: Vec<f64>,
    pub mean_length: f64,
    pub success_rate: f64,
    pub entropy: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Adam {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        let (b1, b2, eps) = (0.9_f64, 0.999_f64, 1e-8);
        self.t += 1;
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + eps);
        }
    }
}

struct Sampled {
    w: Weights<f64>,
    data: EpisodeData,
    /// Expert labels, present during imitation.
    labels: Option<Vec<usize>>,
    returns: Vec<f64>,
    values: Vec<f64>,
    advantages: Vec<f64>,
    scalarized: f64,
}

pub struct Trainer {
    task: TaskKind,
    config: TrainConfig,
    seed: RngSeed,
    policy: Policy,
    adam: Adam,
    houses: Vec<Arc<HouseLayout>>,
    episodes_done: usize,
    log: Vec<BatchStats>,
    pool: Option<rayon::ThreadPool>,
}

/// Training houses for `seed`; validation code uses different seeds.
pub fn training_houses(config: &EnvConfig, count: usize, seed: RngSeed) -> Result<Vec<Arc<HouseLayout>>> {
    (0..count as u64).map(|i| generate_house(seed.derive_named("train-house", i), config).map(Arc::new)).collect()
}

impl Trainer {
    pub fn new(task: TaskKind, config: TrainConfig, seed: RngSeed) -> Result<Trainer> {
        config.validate(task)?;
        let policy = Policy::new(task, config.encoder, config.hidden, seed);
        Trainer::resume(policy, config, seed, 0)
    }

    /// Continues from existing parameters (optimizer state starts fresh).
    pub fn resume(policy: Policy, config: TrainConfig, seed: RngSeed, episodes_done: usize) -> Result<Trainer> {
        let task = policy.task;
        config.validate(task)?;
        let houses = training_houses(&config.house, config.house_pool, seed)?;
        let pool = match config.jobs {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::TrainingFailure(e.to_string()))?,
            ),
            None => None,
        };
        let adam = Adam::new(policy.net.params.len());
        Ok(Trainer { task, config, seed, policy, adam, houses, episodes_done, log: Vec::new(), pool })
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn into_policy(self) -> Policy {
        self.policy
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn log(&self) -> &[BatchStats] {
        &self.log
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn finished(&self) -> bool {
        self.episodes_done >= self.total()
    }

    fn total(&self) -> usize {
        self.config.imitation_episodes + self.config.total_episodes
    }

    fn imitating(&self) -> bool {
        self.episodes_done < self.config.imitation_episodes
    }

    fn sample_episode(&self, index: usize) -> Result<Sampled> {
        let ep_seed = self.seed.derive_named("episode", index as u64);
        let mut rng = ep_seed.stream();
        let w = match &self.config.weight_sampling {
            WeightSampling::SimplexUniform => Weights::sample(self.task.k(), &mut rng)?,
            WeightSampling::Fixed { weights } => Weights::new(weights.clone())?,
        };
        let house = self.houses[rng.random_range(0..self.houses.len())].clone();
        let env = Env::reset(house, &TaskSpec { kind: self.task, target_category: None }, ep_seed.derive(1))?;
        let emb = self.policy.net.embed(w.as_slice())?;
        let mut act_rng = ep_seed.derive(2).stream();
        let (data, labels) = if index < self.config.imitation_episodes {
            // Learner control grows from 0 to 1/2 over the imitation phase.
            let beta = 1.0 - 0.5 * index as f64 / self.config.imitation_episodes as f64;
            let (d, l) = self.imitation_episode(env, &emb, beta, &mut act_rng)?;
            (d, Some(l))
        } else {
            (run_episode(&self.policy, env, &emb, Sampling::Stochastic, &mut act_rng, None, false)?.0, None)
        };

        let mut rewards = data.sub_rewards.iter().map(|r| scalarize(&w, r)).collect::<Result<Vec<f64>>>()?;
        let scalarized = rewards.iter().sum();
        if let Some(last) = rewards.last_mut() {
            let s = data.outcome.success_value;
            *last += self.config.success_bonus * s - self.config.failure_penalty * (1.0 - s);
        }
        let mut returns = vec![0.0; rewards.len()];
        let mut g = 0.0;
        for t in (0..rewards.len()).rev() {
            g = rewards[t] + self.config.gamma * g;
            returns[t] = g;
        }
        let values: Vec<f64> = data.feats.iter().map(|x| self.policy.net.value(x, &emb.values)).collect();
        let (gamma, lambda) = (self.config.gamma, self.config.gae_lambda);
        let mut advantages = vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for t in (0..rewards.len()).rev() {
            let next = if t + 1 < values.len() { values[t + 1] } else { 0.0 };
            let delta = rewards[t] + gamma * next - values[t];
            acc = delta + gamma * lambda * acc;
            advantages[t] = acc;
        }
        Ok(Sampled { w, data, labels, returns, values, advantages, scalarized })
    }

    fn imitation_episode(
        &self,
        mut env: Env,
        emb: &super::net::Embedding,
        beta: f64,
        rng: &mut crate::rng::Stream,
    ) -> Result<(EpisodeData, Vec<usize>)> {
        let mut data = EpisodeData { feats: Vec::new(), actions: Vec::new(), sub_rewards: Vec::new(), outcome: env.outcome() };
        let mut labels = Vec::new();
        while !env.state().done {
            let x = extract(&env);
            let expert = expert_action(&env).index();
            let f = self.policy.net.forward(&x, &emb.values);
            let learner = choose(&f, Sampling::Stochastic, rng);
            let a = if rng.random::<f64>() < beta { expert } else { learner };
            let out = env.step(Action::from_index(a)?)?;
            data.feats.push(x);
            data.actions.push(a);
            labels.push(expert);
            data.sub_rewards.push(out.sub_rewards);
        }
        data.outcome = env.outcome();
        Ok((data, labels))
    }

    fn episode_grad(&self, ep: &Sampled, advantages: &[f64], scale: f64) -> Result<(Vec<f64>, f64)> {
        let net = &self.policy.net;
        let emb = net.embed(ep.w.as_slice())?;
        let mut grad = vec![0.0; net.params.len()];
        let mut d_emb = vec![0.0; net.shapes.emb_dim];
        let beta = self.config.entropy_coef;
        let mut entropy = 0.0;
        for (t, x) in ep.data.feats.iter().enumerate() {
            let f = net.forward(x, &emb.values);
            let h: f64 = -f.probs.iter().zip(&f.log_probs).map(|(p, l)| p * l).sum::<f64>();
            entropy += h;
            let mut dl = [0.0; N_ACTIONS];
            match &ep.labels {
                Some(labels) => {
                    let eps = self.config.imitation_smoothing;
                    for j in 0..N_ACTIONS {
                        let target = eps / N_ACTIONS as f64 + if j == labels[t] { 1.0 - eps } else { 0.0 };
                        dl[j] = scale * (f.probs[j] - target);
                    }
                }
                None => {
                    let a = ep.data.actions[t];
                    let adv = advantages[t];
                    for j in 0..N_ACTIONS {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        dl[j] = -scale * (adv * (onehot - f.probs[j]) - beta * f.probs[j] * (f.log_probs[j] + h));
                    }
                }
            }
            net.backward_step(x, &emb.values, &f, &dl, &mut grad, &mut d_emb);
            let dv = self.config.value_coef * scale * (ep.values[t] - ep.returns[t]);
            net.backward_value(x, &emb.values, dv, &mut grad);
        }
        net.backward_embed(ep.w.as_slice(), &emb, &d_emb, &mut grad);
        Ok((grad, entropy))
    }

    fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Collects one batch and applies one update. Parameters are left
    /// untouched if the update would make them non-finite.
    pub fn run_batch(&mut self) -> Result<Option<BatchStats>> {
        let imitating = self.imitating();
        let phase_end = if imitating { self.config.imitation_episodes } else { self.total() };
        let n = phase_end.saturating_sub(self.episodes_done).min(self.config.episodes_per_batch);
        if n == 0 {
            return Ok(None);
        }
        let start = self.episodes_done;
        let episodes: Vec<Sampled> =
            self.install(|| (start..start + n).into_par_iter().map(|i| self.sample_episode(i)).collect::<Result<_>>())?;

        let raw: Vec<Vec<f64>> = episodes.iter().map(|e| e.advantages.clone()).collect();
        let steps: usize = raw.iter().map(|r| r.len()).sum();
        let advantages: Vec<Vec<f64>> = match self.config.advantage_normalization {
            AdvantageNormalization::None => raw,
            AdvantageNormalization::Batch => {
                let (mean, std) = standardize(&raw.iter().collect::<Vec<_>>());
                raw.iter().map(|r| r.iter().map(|a| (a - mean) / std).collect()).collect()
            }
            AdvantageNormalization::Episode => raw
                .iter()
                .map(|r| {
                    let (mean, std) = standardize(&[r]);
                    r.iter().map(|a| (a - mean) / std).collect()
                })
                .collect(),
        };
        let scale = 1.0 / steps as f64;
        let grads: Vec<(Vec<f64>, f64)> = self.install(|| {
            episodes
                .par_iter()
                .zip(advantages.par_iter())
                .map(|(e, adv)| self.episode_grad(e, adv, scale))
                .collect::<Result<_>>()
        })?;

        let mut grad = vec![0.0; self.policy.net.params.len()];
        let mut entropy = 0.0;
        for (g, h) in &grads {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
            entropy += h;
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::TrainingFailure(format!("non-finite gradient after {} episodes", self.episodes_done)));
        }
        if norm > self.config.max_grad_norm {
            let c = self.config.max_grad_norm / norm;
            grad.iter_mut().for_each(|g| *g *= c);
        }
        let mut next = self.policy.net.params.clone();
        let lr = if imitating { self.config.imitation_learning_rate } else { self.config.learning_rate };
        self.adam.step(&mut next, &grad, lr);
        if next.iter().any(|p| !p.is_finite()) {
            return Err(Error::TrainingFailure(format!("parameters diverged after {} episodes", self.episodes_done)));
        }
        self.policy.net.params = next;
        self.episodes_done += n;
        if imitating && !self.imitating() {
            self.adam = Adam::new(self.policy.net.params.len());
        }

        let k = self.task.k();
        let mut sub = vec![0.0; k];
        for e in &episodes {
            for r in &e.data.sub_rewards {
                for (s, v) in sub.iter_mut().zip(r.as_slice()) {
                    *s += v;
                }
            }
        }
        let stats = BatchStats {
            batch: self.log.len(),
            episodes: self.episodes_done,
            mean_scalarized_return: episodes.iter().map(|e| e.scalarized).sum::<f64>() / n as f64,
            mean_sub_returns: sub.into_iter().map(|s| s / n as f64).collect(),
            mean_length: steps as f64 / n as f64,
            success_rate: episodes.iter().filter(|e| e.data.outcome.success).count() as f64 / n as f64,
            entropy: entropy / steps as f64,
        };
        self.log.push(stats.clone());
        Ok(Some(stats))
    }

    pub fn run(&mut self, mut on_batch: impl FnMut(&BatchStats)) -> Result<()> {
        while let Some(stats) = self.run_batch()? {
            on_batch(&stats);
        }
        Ok(())
    }
}

/// Trains a fresh policy to completion.
pub fn train(task: TaskKind, config: TrainConfig, seed: RngSeed) -> Result<(Policy, Vec<BatchStats>)> {
    let mut trainer = Trainer::new(task, config, seed)?;
    trainer.run(|_| {})?;
    let log = trainer.log.clone();
    Ok((trainer.into_policy(), log))
}
