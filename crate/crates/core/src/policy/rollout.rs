use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::extract;
use super::net::{Embedding, Forward, N_ACTIONS};
use super::Policy;
use crate::env::{Action, Env, HouseLayout, Outcome, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::{RngSeed, Stream};
use crate::trajectory::{Recorder, Trajectory};
use crate::weights::{SubRewards, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    #[default]
    Stochastic,
    Greedy,
}

impl std::str::FromStr for Sampling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Sampling::Stochastic),
            "greedy" => Ok(Sampling::Greedy),
            other => Err(Error::invalid(format!("unknown sampling mode '{other}'"))),
        }
    }
}

pub(crate) fn choose(f: &Forward, sampling: Sampling, rng: &mut Stream) -> usize {
    match sampling {
        Sampling::Greedy => {
            let mut best = 0;
            for a in 1..N_ACTIONS {
                if f.probs[a] > f.probs[best] {
                    best = a;
                }
            }
            best
        }
        Sampling::Stochastic => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (a, p) in f.probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return a;
                }
            }
            N_ACTIONS - 1
        }
    }
}

/// Per-step data retained for policy-gradient updates.
pub(crate) struct EpisodeData {
    pub feats: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub sub_rewards: Vec<SubRewards<f64>>,
    pub outcome: Outcome,
}

pub(crate) fn run_episode(
    policy: &Policy,
    env: Env,
    emb: &Embedding,
    sampling: Sampling,
    rng: &mut Stream,
    weights: Option<&Weights<f64>>,
    keep_trajectory: bool,
) -> Result<(EpisodeData, Option<Trajectory>)> {
    let mut rec = Recorder::new(env);
    let mut data = EpisodeData { feats: Vec::new(), actions: Vec::new(), sub_rewards: Vec::new(), outcome: rec.env().outcome() };
    while !rec.done() {
        let x = extract(rec.env());
        let f = policy.net.forward(&x, &emb.values);
        let a = choose(&f, sampling, rng);
        let out = rec.step(Action::from_index(a)?)?;
        data.feats.push(x);
        data.actions.push(a);
        data.sub_rewards.push(out.sub_rewards);
    }
    data.outcome = rec.env().outcome();
    let tau = keep_trajectory.then(|| rec.finish(weights));
    Ok((data, tau))
}

/// Runs one episode of the weight-conditioned policy.
pub fn rollout(
    policy: &Policy,
    layout: Arc<HouseLayout>,
    task: &TaskSpec,
    w: &Weights<f64>,
    seed: RngSeed,
    sampling: Sampling,
) -> Result<Trajectory> {
    policy.check_task(task)?;
    let env = Env::reset(layout, task, seed)?;
    let emb = policy.net.embed(w.as_slice())?;
    let mut rng = seed.derive_named("actions", 0).stream();
    let (_, tau) = run_episode(policy, env, &emb, sampling, &mut rng, Some(w), true)?;
    Ok(tau.expect("trajectory requested"))
}

/// One rollout per `(house, seed)` job, in parallel, results in job order.
pub fn rollout_many(
    policy: &Policy,
    jobs: &[(Arc<HouseLayout>, RngSeed)],
    task: &TaskSpec,
    w: &Weights<f64>,
    sampling: Sampling,
) -> Result<Vec<Trajectory>> {
    jobs.par_iter().map(|(layout, seed)| rollout(policy, layout.clone(), task, w, *seed, sampling)).collect()
}

/// `(features, action index)` for every step of a recorded trajectory.
pub fn trajectory_steps(tau: &Trajectory) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut out = Vec::with_capacity(tau.len());
    tau.replay(|env, step| {
        out.push((extract(env), step.action.index()));
        Ok(())
    })?;
    Ok(out)
}

/// `Σ_t log π(a_t | s_t; w)` over a recorded trajectory.
pub fn log_prob(tau: &Trajectory, w: &Weights<f64>, policy: &Policy) -> Result<f64> {
    policy.check_task(&tau.task)?;
    let steps = trajectory_steps(tau)?;
    policy.log_prob_steps(&steps, w)
}
