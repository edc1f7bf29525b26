//! Bradley-Terry preference models: pairwise maximum likelihood, group
//! comparisons over a shrinking feasible region, and a simulated user.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{HouseLayout, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{rollout, Policy, Sampling};
use crate::rng::{RngSeed, Stream};
use crate::scalar::{dot, log_sigmoid, sigmoid, softmax};
use crate::trajectory::{trajectory_return, Trajectory};
use crate::weights::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    First,
    Second,
}

impl Label {
    fn sign(self) -> f64 {
        match self {
            Label::First => 1.0,
            Label::Second => -1.0,
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" | "1" => Ok(Label::First),
            "second" | "2" => Ok(Label::Second),
            other => Err(Error::invalid(format!("unknown label '{other}'"))),
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// Two trajectory returns and which one was preferred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
    pub label: Label,
    #[serde(default, skip_serializing_if = "is_false")]
    pub skip: bool,
}

fn check_dims(r1: &[f64], r2: &[f64], k: usize) -> Result<()> {
    if r1.len() != k {
        return Err(Error::ArityMismatch { expected: k, found: r1.len() });
    }
    if r2.len() != k {
        return Err(Error::ArityMismatch { expected: k, found: r2.len() });
    }
    Ok(())
}

/// `ln P(τ1 ≻ τ2)` under Bradley-Terry with utilities `wᵀr`.
pub fn bt_log_probability(r1: &[f64], r2: &[f64], w: &Weights<f64>) -> Result<f64> {
    check_dims(r1, r2, w.k())?;
    Ok(log_sigmoid(dot(w.as_slice(), r1) - dot(w.as_slice(), r2)))
}

pub fn bt_probability(r1: &[f64], r2: &[f64], w: &Weights<f64>) -> Result<f64> {
    check_dims(r1, r2, w.k())?;
    Ok(sigmoid(dot(w.as_slice(), r1) - dot(w.as_slice(), r2)))
}

/// Euclidean projection onto the probability simplex.
pub(crate) fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (i, x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Concave objective `Σ ln σ(wᵀd_i)` over signed return differences.
struct SignedDiffs {
    diffs: Vec<Vec<f64>>,
}

impl SignedDiffs {
    fn value(&self, w: &[f64]) -> f64 {
        self.diffs.iter().map(|d| log_sigmoid(dot(w, d))).sum()
    }

    fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        for d in &self.diffs {
            let s = sigmoid(-dot(w, d));
            for (gi, di) in g.iter_mut().zip(d) {
                *gi += s * di;
            }
        }
        g
    }
}

fn ascend_softmax(obj: &SignedDiffs, init: &[f64], iters: usize, tol: f64) -> (Vec<f64>, f64) {
    let mut theta: Vec<f64> = init.iter().map(|w| w.max(1e-12).ln()).collect();
    let mut w = softmax(&theta);
    let mut value = obj.value(&w);
    let mut step = 1.0;
    for _ in 0..iters {
        let g = obj.gradient(&w);
        let wg = dot(&w, &g);
        let gt: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi * (gi - wg)).collect();
        let mut moved = false;
        for _ in 0..=40 {
            let cand: Vec<f64> = theta.iter().zip(&gt).map(|(t, d)| t + step * d).collect();
            let cw = softmax(&cand);
            let v = obj.value(&cw);
            if v > value {
                let gain = v - value;
                theta = cand;
                w = cw;
                value = v;
                moved = gain >= tol;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (w, value)
}

/// Projected gradient ascent in weight space; reaches faces of the simplex exactly.
fn polish(obj: &SignedDiffs, init: Vec<f64>, iters: usize, tol: f64) -> (Vec<f64>, f64) {
    let mut w = init;
    let mut value = obj.value(&w);
    let mut step = 1.0;
    for _ in 0..iters {
        let g = obj.gradient(&w);
        let mut moved = false;
        for _ in 0..=60 {
            let cand = project_simplex(&w.iter().zip(&g).map(|(wi, gi)| wi + step * gi).collect::<Vec<_>>());
            let v = obj.value(&cand);
            if v > value {
                let gain = v - value;
                w = cand;
                value = v;
                moved = gain >= tol;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (w, value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PairwiseConfig {
    pub restarts: usize,
    pub max_iters: usize,
    pub polish_iters: usize,
    pub tolerance: f64,
}

impl Default for PairwiseConfig {
    fn default() -> Self {
        PairwiseConfig { restarts: 8, max_iters: 500, polish_iters: 5000, tolerance: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseDiagnostics {
    pub log_likelihood: f64,
    pub uniform_log_likelihood: f64,
    pub restart_log_likelihoods: Vec<f64>,
    pub used: usize,
    pub skipped: usize,
}

/// Log-likelihood of the non-skipped pairs at `w`.
pub fn pairwise_log_likelihood(pairs: &[PreferencePair], w: &Weights<f64>) -> Result<f64> {
    let mut total = 0.0;
    for p in pairs.iter().filter(|p| !p.skip) {
        total += match p.label {
            Label::First => bt_log_probability(&p.r1, &p.r2, w)?,
            Label::Second => bt_log_probability(&p.r2, &p.r1, w)?,
        };
    }
    Ok(total)
}

/// Maximum-likelihood weights from labelled pairs.
pub fn fit_pairwise(
    pairs: &[PreferencePair],
    config: &PairwiseConfig,
    seed: RngSeed,
) -> Result<(Weights<f64>, PairwiseDiagnostics)> {
    let used: Vec<&PreferencePair> = pairs.iter().filter(|p| !p.skip).collect();
    let Some(first) = used.first() else {
        return Err(Error::InferenceFailure("no non-skipped preference pairs".into()));
    };
    let k = first.r1.len();
    if k < 2 {
        return Err(Error::invalid("returns need at least two objectives"));
    }
    let mut diffs = Vec::with_capacity(used.len());
    for p in &used {
        check_dims(&p.r1, &p.r2, k)?;
        let s = p.label.sign();
        let d: Vec<f64> = p.r1.iter().zip(&p.r2).map(|(a, b)| s * (a - b)).collect();
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("returns must be finite"));
        }
        diffs.push(d);
    }
    let obj = SignedDiffs { diffs };
    let uniform = vec![1.0 / k as f64; k];
    let mut inits = vec![uniform.clone()];
    for i in 1..config.restarts.max(1) {
        inits.push(Weights::<f64>::sample(k, &mut seed.derive_named("pairwise-init", i as u64).stream())?.into_vec());
    }
    let results: Vec<(Vec<f64>, f64)> =
        inits.par_iter().map(|init| ascend_softmax(&obj, init, config.max_iters, config.tolerance)).collect();
    let (best, _) = results.iter().max_by(|a, b| a.1.total_cmp(&b.1)).cloned().expect("at least one restart");
    let (w, ll) = polish(&obj, best, config.polish_iters, config.tolerance);
    let diagnostics = PairwiseDiagnostics {
        log_likelihood: ll,
        uniform_log_likelihood: obj.value(&uniform),
        restart_log_likelihoods: results.iter().map(|r| r.1).collect(),
        used: used.len(),
        skipped: pairs.len() - used.len(),
    };
    Ok((Weights::normalized(w)?, diagnostics))
}

/// Unrounded group-size bound; natural logarithms throughout.
pub fn group_size_bound(alpha: f64, delta: f64, gap: f64, c: f64) -> Result<f64> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::invalid("alpha must lie in (1/2, 1)"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    if !(gap > 0.0 && gap.is_finite()) || !c.is_finite() {
        return Err(Error::invalid("gap must be positive and c finite"));
    }
    let denom = alpha * (1.0 + gap / 2.0 * c) - 1.0 - (1.0 - alpha) * (1.0 - alpha).ln();
    if denom <= 0.0 {
        return Err(Error::invalid(format!(
            "bound denominator {denom:.6} is not positive; c must exceed (2 - ln 2)/gap = {:.6} or alpha must grow",
            (2.0 - 2f64.ln()) / gap
        )));
    }
    Ok((-delta.ln() - 0.5) / denom)
}

/// Smallest group size with majority error at most `delta`.
pub fn min_group_size(alpha: f64, delta: f64, gap: f64, c: f64) -> Result<usize> {
    let raw = group_size_bound(alpha, delta, gap, c)?;
    Ok((raw.ceil().max(1.0)) as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Ge,
    Le,
}

/// `aᵀw ≥ b` or `aᵀw ≤ b` with unit-norm `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfSpace {
    pub a: Vec<f64>,
    pub b: f64,
    pub sense: Sense,
}

impl HalfSpace {
    pub fn new(a: Vec<f64>, b: f64, sense: Sense) -> Result<HalfSpace> {
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) || !b.is_finite() {
            return Err(Error::invalid("half-space normal must be finite and non-zero"));
        }
        Ok(HalfSpace { a: a.iter().map(|x| x / norm).collect(), b: b / norm, sense })
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        let v = dot(&self.a, w);
        match self.sense {
            Sense::Ge => v >= self.b - 1e-12,
            Sense::Le => v <= self.b + 1e-12,
        }
    }
}

/// Splitting hyperplane of a group query: `G1 = {aᵀw > b1}`, `G2 = {aᵀw < b2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperplane {
    pub a: Vec<f64>,
    pub b1: f64,
    pub b2: f64,
}

impl Hyperplane {
    pub fn gap(&self) -> f64 {
        self.b1 - self.b2
    }

    pub fn in_first(&self, w: &[f64]) -> bool {
        dot(&self.a, w) > self.b1
    }

    pub fn in_second(&self, w: &[f64]) -> bool {
        dot(&self.a, w) < self.b2
    }

    /// The half-space kept after `label`.
    pub fn constraint(&self, label: Label) -> HalfSpace {
        match label {
            Label::First => HalfSpace { a: self.a.clone(), b: self.b2, sense: Sense::Ge },
            Label::Second => HalfSpace { a: self.a.clone(), b: self.b1, sense: Sense::Le },
        }
    }
}

const POOL_SIZE: usize = 500;
const WALK_STEPS: usize = 10;
const FEASIBILITY_PROBES: usize = 20_000;

/// Accumulated half-space constraints and a pool of feasible samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub k: usize,
    pub constraints: Vec<HalfSpace>,
    /// Constraints refused because they would empty the region.
    #[serde(default)]
    pub rejected: Vec<HalfSpace>,
    pub pool: Vec<Vec<f64>>,
}

impl ConstraintSet {
    pub fn new(k: usize, rng: &mut Stream) -> Result<ConstraintSet> {
        if k < 2 {
            return Err(Error::invalid("need at least two objectives"));
        }
        let pool = (0..POOL_SIZE).map(|_| Ok(Weights::<f64>::sample(k, rng)?.into_vec())).collect::<Result<_>>()?;
        Ok(ConstraintSet { k, constraints: Vec::new(), rejected: Vec::new(), pool })
    }

    pub fn feasible(&self, w: &[f64]) -> bool {
        w.len() == self.k && self.constraints.iter().all(|h| h.contains(w))
    }

    /// Monte Carlo estimate of the feasible fraction of the simplex.
    pub fn volume_fraction(&self, samples: usize, rng: &mut Stream) -> Result<f64> {
        let mut hits = 0usize;
        for _ in 0..samples {
            if self.feasible(Weights::<f64>::sample(self.k, rng)?.as_slice()) {
                hits += 1;
            }
        }
        Ok(hits as f64 / samples.max(1) as f64)
    }

    /// Fractions of the pool falling in `G1` and `G2`.
    pub fn slab_fractions(&self, h: &Hyperplane) -> (f64, f64) {
        let n = self.pool.len().max(1) as f64;
        let f1 = self.pool.iter().filter(|w| h.in_first(w)).count() as f64 / n;
        let f2 = self.pool.iter().filter(|w| h.in_second(w)).count() as f64 / n;
        (f1, f2)
    }

    /// Adds `h`; fails with a conflict (leaving the set unchanged) if no feasible point remains.
    pub fn add(&mut self, h: HalfSpace, rng: &mut Stream) -> Result<()> {
        if h.a.len() != self.k {
            return Err(Error::ArityMismatch { expected: self.k, found: h.a.len() });
        }
        let mut survivors: Vec<Vec<f64>> = self.pool.iter().filter(|w| h.contains(w)).cloned().collect();
        if survivors.is_empty() {
            for _ in 0..FEASIBILITY_PROBES {
                let w = Weights::<f64>::sample(self.k, rng)?.into_vec();
                if self.feasible(&w) && h.contains(&w) {
                    survivors.push(w);
                    break;
                }
            }
        }
        if survivors.is_empty() {
            self.rejected.push(h);
            return Err(Error::ConstraintConflict("the constraint leaves no feasible weights".into()));
        }
        self.constraints.push(h);
        self.pool = survivors;
        self.replenish(rng);
        Ok(())
    }

    fn replenish(&mut self, rng: &mut Stream) {
        while self.pool.len() < POOL_SIZE {
            let start = self.pool[rng.random_range(0..self.pool.len())].clone();
            let w = walk(&start, &self.constraints, None, WALK_STEPS, rng);
            self.pool.push(w);
        }
    }

    /// `m` feasible points inside `extra` (itself intersecting the pool).
    pub fn sample_within(&self, extra: &HalfSpace, m: usize, rng: &mut Stream) -> Result<Vec<Vec<f64>>> {
        let inside: Vec<&Vec<f64>> = self.pool.iter().filter(|w| extra.contains(w)).collect();
        if inside.is_empty() {
            return Err(Error::QueryExhausted("no feasible weights on one side of the hyperplane".into()));
        }
        Ok((0..m)
            .map(|_| {
                let start = (*inside.choose(rng).expect("non-empty")).clone();
                walk(&start, &self.constraints, Some(extra), WALK_STEPS, rng)
            })
            .collect())
    }
}

/// Hit-and-run on the simplex intersected with `constraints` (and `extra`).
fn walk(start: &[f64], constraints: &[HalfSpace], extra: Option<&HalfSpace>, steps: usize, rng: &mut Stream) -> Vec<f64> {
    let k = start.len();
    let mut x = start.to_vec();
    for _ in 0..steps {
        let z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mean = z.iter().sum::<f64>() / k as f64;
        let mut d: Vec<f64> = z.iter().map(|v| v - mean).collect();
        let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        d.iter_mut().for_each(|v| *v /= norm);
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..k {
            if d[i] > 0.0 {
                lo = lo.max(-x[i] / d[i]);
            } else if d[i] < 0.0 {
                hi = hi.min(-x[i] / d[i]);
            }
        }
        for h in constraints.iter().chain(extra) {
            let v = dot(&h.a, &x);
            let s = dot(&h.a, &d);
            if s.abs() < 1e-15 {
                continue;
            }
            let t = (h.b - v) / s;
            match (h.sense, s > 0.0) {
                (Sense::Ge, true) | (Sense::Le, false) => lo = lo.max(t),
                (Sense::Ge, false) | (Sense::Le, true) => hi = hi.min(t),
            }
        }
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            continue;
        }
        let t = rng.random_range(lo..=hi);
        let cand: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| (xi + t * di).max(0.0)).collect();
        let total: f64 = cand.iter().sum();
        let cand: Vec<f64> = cand.into_iter().map(|v| v / total).collect();
        if constraints.iter().chain(extra).all(|h| h.contains(&cand)) {
            x = cand;
        }
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupQueryConfig {
    pub m: usize,
    pub gap: f64,
    /// Minimum pool fraction on each side of the hyperplane.
    pub min_fraction: f64,
    pub retries: usize,
    pub sampling: Sampling,
}

impl Default for GroupQueryConfig {
    fn default() -> Self {
        GroupQueryConfig { m: 2, gap: 0.5, min_fraction: 0.05, retries: 10, sampling: Sampling::Stochastic }
    }
}

/// Two groups of `m` weights on either side of a hyperplane, with the
/// returns of index-aligned rollouts (pair `j` shares house and seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupQuery {
    pub hyperplane: Hyperplane,
    pub m: usize,
    pub weights1: Vec<Vec<f64>>,
    pub weights2: Vec<Vec<f64>>,
    pub returns1: Vec<Vec<f64>>,
    pub returns2: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub houses: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub episode_seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories1: Vec<Trajectory>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories2: Vec<Trajectory>,
}

impl GroupQuery {
    /// A query over given returns, without trajectories.
    pub fn from_returns(hyperplane: Hyperplane, returns1: Vec<Vec<f64>>, returns2: Vec<Vec<f64>>) -> Result<GroupQuery> {
        if returns1.len() != returns2.len() || returns1.is_empty() {
            return Err(Error::invalid("both groups need the same non-zero number of returns"));
        }
        Ok(GroupQuery {
            hyperplane,
            m: returns1.len(),
            weights1: Vec::new(),
            weights2: Vec::new(),
            returns1,
            returns2,
            houses: Vec::new(),
            episode_seeds: Vec::new(),
            trajectories1: Vec::new(),
            trajectories2: Vec::new(),
        })
    }
}

/// Median split along a random direction, halving the gap whenever a side
/// holds less than the minimum fraction of the pool.
pub fn choose_hyperplane(constraints: &ConstraintSet, config: &GroupQueryConfig, rng: &mut Stream) -> Result<Hyperplane> {
    let k = constraints.k;
    let mut gap = config.gap;
    for _ in 0..config.retries.max(1) {
        let z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        let a: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let mut proj: Vec<f64> = constraints.pool.iter().map(|w| dot(&a, w)).collect();
        proj.sort_by(f64::total_cmp);
        let b = proj[proj.len() / 2];
        let h = Hyperplane { a, b1: b + gap / 2.0, b2: b - gap / 2.0 };
        let (f1, f2) = constraints.slab_fractions(&h);
        if f1 >= config.min_fraction && f2 >= config.min_fraction {
            return Ok(h);
        }
        gap *= 0.5;
    }
    Err(Error::QueryExhausted(format!(
        "no hyperplane leaves {:.0}% of the feasible region on both sides after {} tries",
        config.min_fraction * 100.0,
        config.retries
    )))
}

/// Builds a group query: picks a hyperplane, samples `m` weights per side and
/// rolls the policy out on shared houses and seeds.
pub fn make_group_query(
    constraints: &ConstraintSet,
    config: &GroupQueryConfig,
    policy: &Policy,
    houses: &[Arc<HouseLayout>],
    task: &TaskSpec,
    seed: RngSeed,
) -> Result<GroupQuery> {
    if config.m == 0 {
        return Err(Error::invalid("group size must be at least 1"));
    }
    if houses.is_empty() {
        return Err(Error::invalid("no houses to roll out in"));
    }
    if constraints.k != policy.k() {
        return Err(Error::ArityMismatch { expected: policy.k(), found: constraints.k });
    }
    let mut rng = seed.stream();
    let hyperplane = choose_hyperplane(constraints, config, &mut rng)?;
    let side1 = HalfSpace { a: hyperplane.a.clone(), b: hyperplane.b1, sense: Sense::Ge };
    let side2 = HalfSpace { a: hyperplane.a.clone(), b: hyperplane.b2, sense: Sense::Le };
    let weights1 = constraints.sample_within(&side1, config.m, &mut rng)?;
    let weights2 = constraints.sample_within(&side2, config.m, &mut rng)?;
    let house_idx: Vec<usize> = (0..config.m).map(|_| rng.random_range(0..houses.len())).collect();
    let episode_seeds: Vec<u64> = (0..config.m).map(|_| rng.random()).collect();

    let jobs: Vec<(usize, &Vec<f64>)> = (0..config.m).map(|j| (j, &weights1[j])).chain((0..config.m).map(|j| (j, &weights2[j]))).collect();
    let trajectories: Vec<Trajectory> = jobs
        .par_iter()
        .map(|(j, w)| {
            let w = Weights::normalized((*w).clone())?;
            rollout(policy, houses[house_idx[*j]].clone(), task, &w, RngSeed(episode_seeds[*j]), config.sampling)
        })
        .collect::<Result<_>>()?;
    let returns: Vec<Vec<f64>> = trajectories.iter().map(|t| Ok(trajectory_return(t)?.0)).collect::<Result<_>>()?;
    let mut trajectories1 = trajectories;
    let trajectories2 = trajectories1.split_off(config.m);
    let mut returns1 = returns;
    let returns2 = returns1.split_off(config.m);
    Ok(GroupQuery {
        hyperplane,
        m: config.m,
        weights1,
        weights2,
        returns1,
        returns2,
        houses: house_idx,
        episode_seeds,
        trajectories1,
        trajectories2,
    })
}

/// Applies a group label; on conflict the set is unchanged and the error returned.
pub fn apply_group_label(constraints: &mut ConstraintSet, query: &GroupQuery, label: Label, rng: &mut Stream) -> Result<()> {
    constraints.add(query.hyperplane.constraint(label), rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupDiagnostics {
    pub log_likelihood: f64,
    pub pool_best_log_likelihood: f64,
    pub queries: usize,
    pub constraints: usize,
    pub pool_size: usize,
}

fn group_objective(history: &[(GroupQuery, Label)]) -> Result<SignedDiffs> {
    let mut diffs = Vec::new();
    for (q, label) in history {
        if q.returns1.len() != q.returns2.len() {
            return Err(Error::invalid("group query returns are not index-aligned"));
        }
        let s = label.sign();
        for (r1, r2) in q.returns1.iter().zip(&q.returns2) {
            check_dims(r1, r2, r1.len())?;
            diffs.push(r1.iter().zip(r2).map(|(a, b)| s * (a - b)).collect());
        }
    }
    Ok(SignedDiffs { diffs })
}

/// Constrained maximum likelihood over the feasible region.
pub fn fit_group(constraints: &ConstraintSet, history: &[(GroupQuery, Label)]) -> Result<(Weights<f64>, GroupDiagnostics)> {
    if history.is_empty() {
        return Err(Error::InferenceFailure("no labelled group queries".into()));
    }
    let obj = group_objective(history)?;
    if obj.diffs.iter().any(|d| d.len() != constraints.k) {
        return Err(Error::ArityMismatch { expected: constraints.k, found: obj.diffs[0].len() });
    }
    let (mut w, pool_best) = constraints
        .pool
        .iter()
        .map(|w| (w.clone(), obj.value(w)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::InferenceFailure("empty feasible pool".into()))?;
    let mut value = pool_best;
    let k = constraints.k;
    let mut delta: f64 = 0.1;
    while delta > 1e-7 {
        let mut improved = false;
        for i in 0..k {
            for j in 0..k {
                if i == j || w[i] <= 0.0 {
                    continue;
                }
                let step = delta.min(w[i]);
                let mut cand = w.clone();
                cand[i] -= step;
                cand[j] += step;
                if !constraints.feasible(&cand) {
                    continue;
                }
                let v = obj.value(&cand);
                if v > value {
                    w = cand;
                    value = v;
                    improved = true;
                }
            }
        }
        if !improved {
            delta *= 0.5;
        }
    }
    let diagnostics = GroupDiagnostics {
        log_likelihood: value,
        pool_best_log_likelihood: pool_best,
        queries: history.len(),
        constraints: constraints.constraints.len(),
        pool_size: constraints.pool.len(),
    };
    Ok((Weights::normalized(w)?, diagnostics))
}

/// Simulated labeller with Bradley-Terry choices at `w_star`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimUser {
    pub w_star: Vec<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    2.0 / 3.0
}

impl SimUser {
    pub fn new(w_star: Weights<f64>, alpha: f64) -> Result<SimUser> {
        if !(alpha > 0.5 && alpha <= 1.0) {
            return Err(Error::invalid("alpha must lie in (1/2, 1]"));
        }
        Ok(SimUser { w_star: w_star.into_vec(), alpha })
    }

    fn weights(&self) -> Weights<f64> {
        Weights::from_raw(self.w_star.clone())
    }
}

pub fn simulate_pair(r1: &[f64], r2: &[f64], user: &SimUser, rng: &mut Stream) -> Result<Label> {
    let p = bt_probability(r1, r2, &user.weights())?;
    Ok(if rng.random::<f64>() < p { Label::First } else { Label::Second })
}

/// α-majority over per-pair draws; `None` when neither side clears the threshold.
pub fn simulate_group(query: &GroupQuery, user: &SimUser, rng: &mut Stream) -> Result<Option<Label>> {
    let mut wins = 0usize;
    for (r1, r2) in query.returns1.iter().zip(&query.returns2) {
        if simulate_pair(r1, r2, user, rng)? == Label::First {
            wins += 1;
        }
    }
    let m = query.returns1.len() as f64;
    let threshold = user.alpha * m;
    if wins as f64 > threshold {
        Ok(Some(Label::First))
    } else if (query.returns1.len() - wins) as f64 > threshold {
        Ok(Some(Label::Second))
    } else {
        Ok(None)
    }
}

/// Returns with `r1 - r2 = c (a - (b1 + b2)/2 · 1)`, so that
/// `w*ᵀ(r1 - r2) = c (aᵀw* - (b1 + b2)/2)` on the simplex.
pub fn bound_returns(h: &Hyperplane, c: f64) -> (Vec<f64>, Vec<f64>) {
    let mid = (h.b1 + h.b2) / 2.0;
    let r1 = h.a.iter().map(|a| c * (a - mid)).collect();
    (r1, vec![0.0; h.a.len()])
}
