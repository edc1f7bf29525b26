//! Maximum-likelihood weights from demonstrations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex_grid;
use crate::error::{Error, Result};
use crate::policy::{trajectory_steps, Policy};
use crate::rng::RngSeed;
use crate::scalar::softmax;
use crate::trajectory::Trajectory;
use crate::weights::Weights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    BestLoss,
    AverageConverged,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best_loss" | "best-loss" => Ok(Aggregation::BestLoss),
            "average_converged" | "average-converged" => Ok(Aggregation::AverageConverged),
            other => Err(Error::invalid(format!("unknown aggregation '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoInferConfig {
    /// Restart count; the first always starts at uniform weights.
    pub restarts: usize,
    pub max_iters: usize,
    pub step_size: f64,
    pub fd_epsilon: f64,
    pub tolerance: f64,
    pub aggregation: Aggregation,
    /// Grid spacing `1/flat_grid_steps` for the flat-landscape check.
    pub flat_grid_steps: usize,
    /// Relative loss range below which the landscape counts as flat.
    pub flat_tolerance: f64,
}

impl Default for DemoInferConfig {
    fn default() -> Self {
        DemoInferConfig {
            restarts: 8,
            max_iters: 200,
            step_size: 1.0,
            fd_epsilon: 1e-4,
            tolerance: 1e-6,
            aggregation: Aggregation::BestLoss,
            flat_grid_steps: 4,
            flat_tolerance: 1e-9,
        }
    }
}

impl DemoInferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.fd_epsilon > 0.0) || !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::invalid("epsilon and step size must be positive"));
        }
        if self.flat_grid_steps == 0 {
            return Err(Error::invalid("flat_grid_steps must be positive"));
        }
        Ok(())
    }
}

/// Demonstrations with their per-step features precomputed.
pub struct DemoSet {
    k: usize,
    steps: Vec<Vec<(Vec<f64>, usize)>>,
}

impl DemoSet {
    pub fn new(demos: &[Trajectory], policy: &Policy) -> Result<DemoSet> {
        if demos.is_empty() {
            return Err(Error::invalid("no demonstrations given"));
        }
        let steps = demos
            .par_iter()
            .map(|tau| {
                if tau.task.kind != policy.task {
                    return Err(Error::invalid(format!(
                        "demonstration task {} does not match the checkpoint task {}",
                        tau.task.kind, policy.task
                    )));
                }
                trajectory_steps(tau)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DemoSet { k: policy.k(), steps })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_steps(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }
}

/// `-Σ_demos Σ_t log π(a_t | s_t; w)`.
pub fn demo_loss(w: &Weights<f64>, demos: &DemoSet, policy: &Policy) -> Result<f64> {
    if demos.is_empty() {
        return Err(Error::invalid("no demonstrations given"));
    }
    if w.k() != demos.k {
        return Err(Error::ArityMismatch { expected: demos.k, found: w.k() });
    }
    let mut total = 0.0;
    for steps in &demos.steps {
        total -= policy.log_prob_steps(steps, w)?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartTrace {
    pub init: Vec<f64>,
    pub weights: Vec<f64>,
    pub loss: f64,
    /// Loss after every accepted step, starting with the initial loss.
    pub losses: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoDiagnostics {
    pub restarts: Vec<RestartTrace>,
    pub flat_landscape: bool,
    pub grid_loss_range: f64,
    pub uniform_loss: f64,
    pub loss: f64,
    pub demos: usize,
    pub steps: usize,
}

fn loss_theta(theta: &[f64], demos: &DemoSet, policy: &Policy) -> Result<f64> {
    demo_loss(&Weights::from_raw(softmax(theta)), demos, policy)
}

/// Central finite-difference gradient in softmax parameters.
pub(crate) fn fd_gradient(theta: &[f64], eps: f64, f: &dyn Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut g = vec![0.0; theta.len()];
    let mut x = theta.to_vec();
    for i in 0..theta.len() {
        x[i] = theta[i] + eps;
        let up = f(&x)?;
        x[i] = theta[i] - eps;
        let down = f(&x)?;
        x[i] = theta[i];
        g[i] = (up - down) / (2.0 * eps);
    }
    Ok(g)
}

fn descend(init: Vec<f64>, demos: &DemoSet, policy: &Policy, config: &DemoInferConfig) -> Result<RestartTrace> {
    let f = |t: &[f64]| loss_theta(t, demos, policy);
    let mut theta: Vec<f64> = init.iter().map(|w| w.max(1e-12).ln()).collect();
    let mut loss = f(&theta)?;
    let mut losses = vec![loss];
    let mut converged = false;
    let mut step = config.step_size;
    for _ in 0..config.max_iters {
        let g = fd_gradient(&theta, config.fd_epsilon, &f)?;
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InferenceFailure("non-finite gradient".into()));
        }
        let mut accepted = None;
        for _ in 0..=20 {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t - step * gi).collect();
            let l = f(&cand)?;
            if l.is_finite() && l < loss {
                accepted = Some((cand, l));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, l)) = accepted else {
            converged = true;
            break;
        };
        let improvement = loss - l;
        theta = cand;
        loss = l;
        losses.push(loss);
        step *= 2.0;
        if improvement < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(RestartTrace { init, weights: softmax(&theta), loss, losses, converged })
}

/// Minimizes the demonstration loss over the simplex from several starts.
pub fn infer_from_demos(
    demos: &DemoSet,
    policy: &Policy,
    config: &DemoInferConfig,
    seed: RngSeed,
) -> Result<(Weights<f64>, DemoDiagnostics)> {
    config.validate()?;
    if demos.is_empty() {
        return Err(Error::invalid("no demonstrations given"));
    }
    let k = demos.k;
    let uniform = Weights::uniform(k)?;
    let uniform_loss = demo_loss(&uniform, demos, policy)?;

    let grid = simplex_grid(k, config.flat_grid_steps);
    let grid_losses =
        grid.par_iter().map(|w| demo_loss(&Weights::from_raw(w.clone()), demos, policy)).collect::<Result<Vec<_>>>()?;
    let lo = grid_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = grid_losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid_loss_range = hi - lo;
    let flat = grid_loss_range <= config.flat_tolerance * uniform_loss.abs().max(1.0);

    let inits: Vec<Vec<f64>> = (0..config.restarts)
        .map(|i| {
            if i == 0 {
                Ok(uniform.as_slice().to_vec())
            } else {
                Ok(Weights::<f64>::sample(k, &mut seed.derive_named("demo-init", i as u64).stream())?.into_vec())
            }
        })
        .collect::<Result<_>>()?;
    let traces: Vec<Result<RestartTrace>> = inits.into_par_iter().map(|init| descend(init, demos, policy, config)).collect();
    let restarts: Vec<RestartTrace> = traces.into_iter().filter_map(|t| t.ok()).filter(|t| t.loss.is_finite()).collect();
    if restarts.is_empty() {
        return Err(Error::InferenceFailure("every restart produced a non-finite loss".into()));
    }

    let best = restarts.iter().min_by(|a, b| a.loss.total_cmp(&b.loss)).expect("non-empty");
    let w = if flat {
        uniform.clone()
    } else {
        match config.aggregation {
            Aggregation::BestLoss => Weights::normalized(best.weights.clone())?,
            Aggregation::AverageConverged => {
                let bound = if best.loss > 0.0 { 2.0 * best.loss } else { best.loss };
                let chosen: Vec<&RestartTrace> = restarts.iter().filter(|t| t.converged && t.loss <= bound).collect();
                let chosen = if chosen.is_empty() { vec![best] } else { chosen };
                let mut mean = vec![0.0; k];
                for t in &chosen {
                    for (m, v) in mean.iter_mut().zip(&t.weights) {
                        *m += v / chosen.len() as f64;
                    }
                }
                Weights::normalized(mean)?
            }
        }
    };
    let loss = demo_loss(&w, demos, policy)?;
    let diagnostics = DemoDiagnostics {
        restarts,
        flat_landscape: flat,
        grid_loss_range,
        uniform_loss,
        loss,
        demos: demos.len(),
        steps: demos.total_steps(),
    };
    Ok((w, diagnostics))
}
