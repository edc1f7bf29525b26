//! Recorded episodes and their on-disk format.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Cell, Env, HouseFile, HouseLayout, Orientation, Outcome, Pitch, Pose, StepOutcome, TaskSpec};
use crate::error::{Error, Result};
use crate::weights::{SubRewards, Weights};

/// One transition; the pose fields describe the state after the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    pub action: Action,
    pub cell: Cell,
    pub orientation: Orientation,
    pub pitch: Pitch,
    pub visited_hash: u64,
    pub sub_rewards: SubRewards<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub collision: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub new_objects: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub house_seed: u64,
    pub task: TaskSpec,
    pub house: HouseFile,
    pub start: Pose,
    /// Conditioning weights used to generate the trajectory, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub steps: Vec<TrajectoryStep>,
    pub outcome: Outcome,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn k(&self) -> usize {
        self.task.k()
    }

    pub fn layout(&self) -> Result<HouseLayout> {
        HouseLayout::from_file(&self.house)
    }

    pub fn read(path: &Path) -> Result<Trajectory> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Re-simulates the episode, calling `before` with the environment ahead of every step.
    /// Fails if the recorded poses disagree with the simulation.
    pub fn replay(&self, mut before: impl FnMut(&Env, &TrajectoryStep) -> Result<()>) -> Result<Env> {
        let layout = Arc::new(self.layout()?);
        let mut env = Env::from_pose(layout, &self.task, self.start)?;
        for step in &self.steps {
            before(&env, step)?;
            env.step(step.action)?;
            let s = env.state();
            if s.cell != step.cell || s.orientation != step.orientation || s.pitch != step.pitch || s.t != step.t {
                return Err(Error::invalid(format!("trajectory diverges from the simulator at t={}", step.t)));
            }
        }
        Ok(env)
    }
}

/// Elementwise sum of per-step sub-rewards.
pub fn trajectory_return(tau: &Trajectory) -> Result<SubRewards<f64>> {
    if tau.steps.is_empty() {
        return Err(Error::invalid("trajectory has no steps"));
    }
    let mut total = SubRewards::zeros(tau.k());
    for s in &tau.steps {
        if s.sub_rewards.k() != tau.k() {
            return Err(Error::invalid(format!("step {} has {} sub-rewards, expected {}", s.t, s.sub_rewards.k(), tau.k())));
        }
        total.add_assign(&s.sub_rewards);
    }
    Ok(total)
}

/// Wraps an environment and records every step into a [`Trajectory`].
pub struct Recorder {
    env: Env,
    start: Pose,
    steps: Vec<TrajectoryStep>,
}

impl Recorder {
    pub fn new(env: Env) -> Recorder {
        let start = env.pose();
        Recorder { env, start, steps: Vec::new() }
    }

    pub fn env(&self) -> &Env {
        &self.env
    }

    pub fn done(&self) -> bool {
        self.env.state().done
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        let out = self.env.step(action)?;
        let s = self.env.state();
        self.steps.push(TrajectoryStep {
            t: s.t,
            action,
            cell: s.cell,
            orientation: s.orientation,
            pitch: s.pitch,
            visited_hash: s.visited_hash,
            sub_rewards: out.sub_rewards.clone(),
            collision: out.info.collision,
            new_objects: out.info.new_objects.clone(),
        });
        Ok(out)
    }

    pub fn finish(self, weights: Option<&Weights<f64>>) -> Trajectory {
        let layout = self.env.layout();
        Trajectory {
            house_seed: layout.seed.0,
            task: self.env.task().clone(),
            house: layout.to_file(),
            start: self.start,
            weights: weights.map(|w| w.as_slice().to_vec()),
            steps: self.steps,
            outcome: self.env.outcome(),
        }
    }
}
