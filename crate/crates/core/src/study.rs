//! Simulated-user studies comparing pairwise and group elicitation.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{HouseLayout, TaskSpec};
use crate::error::{Error, Result};
use crate::infer::{
    apply_group_label, fit_group, fit_pairwise, make_group_query, simulate_group, simulate_pair, ConstraintSet,
    GroupQueryConfig, PairwiseConfig, PreferencePair, SimUser,
};
use crate::metrics::ggi;
use crate::policy::{rollout, Policy, Sampling};
use crate::rng::RngSeed;
use crate::trajectory::trajectory_return;
use crate::weights::{cosine_similarity, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyMode {
    Pairwise,
    Group,
}

impl std::str::FromStr for StudyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pairwise" => Ok(StudyMode::Pairwise),
            "group" => Ok(StudyMode::Group),
            other => Err(Error::invalid(format!("unknown study mode '{other}'"))),
        }
    }
}

/// How each simulated user's true weights are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum UserSampler {
    /// Peaked weights cycling through the objectives, user `i` prioritizing `i mod K`.
    PeakedCycle { nu: f64 },
    SimplexUniform,
    /// Every user shares these weights.
    Fixed { weights: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub mode: StudyMode,
    /// Group size; ignored for pairwise studies.
    pub m: usize,
    /// Labelled queries per user.
    pub n: usize,
    pub users: usize,
    pub alpha: f64,
    pub sampler: Option<UserSampler>,
    pub sampling: Sampling,
    /// Episodes in the shared pairwise trajectory pool.
    pub pool_episodes: usize,
    /// Trajectories per pool episode, each at its own random weights.
    pub pool_width: usize,
    /// Pair trajectories only within one pool episode instead of across the whole pool.
    pub pair_within_episode: bool,
    /// Query attempts per labelled query before giving up on a user.
    pub max_attempts: usize,
    pub group: GroupQueryConfig,
    pub pairwise: PairwiseConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            mode: StudyMode::Group,
            m: 2,
            n: 25,
            users: 20,
            alpha: 2.0 / 3.0,
            sampler: None,
            sampling: Sampling::Stochastic,
            pool_episodes: 300,
            pool_width: 4,
            pair_within_episode: false,
            max_attempts: 10,
            group: GroupQueryConfig::default(),
            pairwise: PairwiseConfig::default(),
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("a study needs at least one query per user"));
        }
        if self.users == 0 {
            return Err(Error::invalid("a study needs at least one user"));
        }
        if self.mode == StudyMode::Group && self.m == 0 {
            return Err(Error::invalid("group size must be at least 1"));
        }
        if self.mode == StudyMode::Pairwise && (self.pool_episodes == 0 || self.pool_width < 2) {
            return Err(Error::invalid("the pairwise pool needs episodes with at least two trajectories"));
        }
        if !(self.alpha > 0.5 && self.alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (1/2, 1]"));
        }
        if self.max_attempts == 0 {
            return Err(Error::invalid("max_attempts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserResult {
    pub user: usize,
    pub w_star: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub cosine: f64,
    pub ggi: f64,
    pub labelled: usize,
    /// Queries resampled after a tie or a conflicting label.
    pub resampled: usize,
    /// Accepted group constraints that cut off `w_star`.
    pub excluded_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub mode: StudyMode,
    pub m: usize,
    pub n: usize,
    pub users: usize,
    /// Trajectories shown to each user.
    pub trajectories_per_user: usize,
    pub mean_cosine: f64,
    pub std_cosine: f64,
    pub mean_ggi: f64,
    pub results: Vec<UserResult>,
}

impl StudySummary {
    pub fn csv_header() -> &'static str {
        "mode,m,n,users,trajectories_per_user,mean_cosine,std_cosine,mean_ggi"
    }

    pub fn csv_row(&self) -> String {
        let m = if self.mode == StudyMode::Group { self.m.to_string() } else { String::new() };
        let mode = match self.mode {
            StudyMode::Pairwise => "pairwise",
            StudyMode::Group => "group",
        };
        format!(
            "{mode},{m},{},{},{},{},{},{}",
            self.n, self.users, self.trajectories_per_user, self.mean_cosine, self.std_cosine, self.mean_ggi
        )
    }
}

fn user_weights(sampler: &UserSampler, k: usize, user: usize, seed: RngSeed) -> Result<Weights<f64>> {
    match sampler {
        UserSampler::PeakedCycle { nu } => Weights::peaked(k, user % k, *nu),
        UserSampler::Fixed { weights } if weights.len() != k => {
            Err(Error::ArityMismatch { expected: k, found: weights.len() })
        }
        UserSampler::Fixed { weights } => Weights::new(weights.clone()),
        UserSampler::SimplexUniform => Weights::sample(k, &mut seed.derive_named("w-star", user as u64).stream()),
    }
}

/// Returns of `pool_width` trajectories per episode, all sharing that episode's start.
pub fn pairwise_pool(
    policy: &Policy,
    houses: &[Arc<HouseLayout>],
    task: &TaskSpec,
    config: &StudyConfig,
    seed: RngSeed,
) -> Result<Vec<Vec<Vec<f64>>>> {
    if houses.is_empty() {
        return Err(Error::invalid("no houses to roll out in"));
    }
    let k = policy.k();
    (0..config.pool_episodes)
        .into_par_iter()
        .map(|e| {
            let mut rng = seed.derive_named("pool", e as u64).stream();
            let house = houses[rng.random_range(0..houses.len())].clone();
            let episode = RngSeed(rng.random());
            (0..config.pool_width)
                .map(|_| {
                    let w = Weights::sample(k, &mut rng)?;
                    let tau = rollout(policy, house.clone(), task, &w, episode, config.sampling)?;
                    Ok(trajectory_return(&tau)?.0)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

fn distinct_pair(len: usize, rng: &mut impl Rng) -> (usize, usize) {
    let i = rng.random_range(0..len);
    let mut j = rng.random_range(0..len - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

fn pairwise_user(pool: &[Vec<Vec<f64>>], user: &SimUser, config: &StudyConfig, seed: RngSeed) -> Result<(Weights<f64>, usize, usize)> {
    let mut rng = seed.stream();
    let mut pairs = Vec::with_capacity(config.n);
    let flat: Vec<&Vec<f64>> = pool.iter().flatten().collect();
    for _ in 0..config.n {
        let (r1, r2) = if config.pair_within_episode {
            let episode = &pool[rng.random_range(0..pool.len())];
            let (i, j) = distinct_pair(episode.len(), &mut rng);
            (&episode[i], &episode[j])
        } else {
            let (i, j) = distinct_pair(flat.len(), &mut rng);
            (flat[i], flat[j])
        };
        let label = simulate_pair(r1, r2, user, &mut rng)?;
        pairs.push(PreferencePair { r1: r1.clone(), r2: r2.clone(), label, skip: false });
    }
    let (w, _) = fit_pairwise(&pairs, &config.pairwise, seed.derive_named("fit", 0))?;
    Ok((w, 0, 0))
}

fn group_user(
    policy: &Policy,
    houses: &[Arc<HouseLayout>],
    task: &TaskSpec,
    user: &SimUser,
    config: &StudyConfig,
    seed: RngSeed,
) -> Result<(Weights<f64>, usize, usize)> {
    let mut rng = seed.derive_named("constraints", 0).stream();
    let mut excluded = 0;
    let mut constraints = ConstraintSet::new(policy.k(), &mut rng)?;
    let query_config = GroupQueryConfig { m: config.m, sampling: config.sampling, ..config.group.clone() };
    let mut history = Vec::with_capacity(config.n);
    let mut resampled = 0;
    let mut attempt = 0u64;
    while history.len() < config.n {
        if attempt as usize >= config.max_attempts * config.n {
            return Err(Error::QueryExhausted(format!(
                "only {} of {} queries labelled after {attempt} attempts",
                history.len(),
                config.n
            )));
        }
        let query = make_group_query(&constraints, &query_config, policy, houses, task, seed.derive_named("query", attempt))?;
        attempt += 1;
        let Some(label) = simulate_group(&query, user, &mut rng)? else {
            resampled += 1;
            continue;
        };
        if apply_group_label(&mut constraints, &query, label, &mut rng).is_err() {
            resampled += 1;
            continue;
        }
        if !query.hyperplane.constraint(label).contains(&user.w_star) {
            excluded += 1;
        }
        history.push((query, label));
    }
    let (w, _) = fit_group(&constraints, &history)?;
    Ok((w, resampled, excluded))
}

/// Runs every simulated user through the configured protocol.
pub fn run_study(
    policy: &Policy,
    houses: &[Arc<HouseLayout>],
    task: &TaskSpec,
    config: &StudyConfig,
    seed: RngSeed,
) -> Result<StudySummary> {
    config.validate()?;
    policy.check_task(task)?;
    let k = policy.k();
    let sampler = config.sampler.clone().unwrap_or(UserSampler::PeakedCycle { nu: task.kind.default_nu() });
    let pool = match config.mode {
        StudyMode::Pairwise => pairwise_pool(policy, houses, task, config, seed.derive_named("pool", 0))?,
        StudyMode::Group => Vec::new(),
    };
    let results = (0..config.users)
        .into_par_iter()
        .map(|u| {
            let w_star = user_weights(&sampler, k, u, seed)?;
            let user = SimUser::new(w_star.clone(), config.alpha)?;
            let user_seed = seed.derive_named("user", u as u64);
            let (w_hat, resampled, excluded_truth) = match config.mode {
                StudyMode::Pairwise => pairwise_user(&pool, &user, config, user_seed)?,
                StudyMode::Group => group_user(policy, houses, task, &user, config, user_seed)?,
            };
            Ok(UserResult {
                user: u,
                cosine: cosine_similarity(&w_hat, &w_star)?,
                ggi: ggi(&w_hat),
                w_star: w_star.into_vec(),
                w_hat: w_hat.into_vec(),
                labelled: config.n,
                resampled,
                excluded_truth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = results.len() as f64;
    let mean_cosine = results.iter().map(|r| r.cosine).sum::<f64>() / n;
    let std_cosine = (results.iter().map(|r| (r.cosine - mean_cosine).powi(2)).sum::<f64>() / n).sqrt();
    let mean_ggi = results.iter().map(|r| r.ggi).sum::<f64>() / n;
    let trajectories_per_user = match config.mode {
        StudyMode::Pairwise => 2 * config.n,
        StudyMode::Group => 2 * config.m * config.n,
    };
    Ok(StudySummary {
        mode: config.mode,
        m: config.m,
        n: config.n,
        users: config.users,
        trajectories_per_user,
        mean_cosine,
        std_cosine,
        mean_ggi,
        results,
    })
}
