//! Display payloads derived from recorded trajectories.

use std::collections::HashSet;

use mopref_core::env::{Action, HouseObject, Orientation, Outcome, Pitch, Pose};
use mopref_core::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: usize,
    pub x: i32,
    pub y: i32,
    pub orientation: Orientation,
    pub pitch: Pitch,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Collision,
    NewObject,
    NewCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub kind: EventKind,
    /// Object index for `new_object` events.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRendering {
    pub width: usize,
    pub height: usize,
    /// One string per row: `.` free, `#` wall, `o` obstacle.
    pub grid: Vec<String>,
    pub objects: Vec<HouseObject>,
    pub start: Pose,
    pub waypoints: Vec<Waypoint>,
    pub events: Vec<Event>,
    pub objectives: Vec<String>,
    /// `cumulative[k][t]` is objective `k`'s summed sub-reward after step `t`.
    pub cumulative: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    pub outcome: Outcome,
}

/// Deterministic rendering of a trajectory; holds no policy internals.
pub fn render(tau: &Trajectory) -> TrajectoryRendering {
    let k = tau.k();
    let mut visited = HashSet::from([tau.start.cell]);
    let mut events = Vec::new();
    let mut waypoints = Vec::with_capacity(tau.steps.len());
    let mut cumulative = vec![Vec::with_capacity(tau.steps.len()); k];
    let mut running = vec![0.0; k];
    for step in &tau.steps {
        waypoints.push(Waypoint {
            t: step.t,
            x: step.cell.0,
            y: step.cell.1,
            orientation: step.orientation,
            pitch: step.pitch,
            action: step.action,
        });
        if step.collision {
            events.push(Event { t: step.t, kind: EventKind::Collision, object: None });
        }
        for &o in &step.new_objects {
            events.push(Event { t: step.t, kind: EventKind::NewObject, object: Some(o) });
        }
        if visited.insert(step.cell) {
            events.push(Event { t: step.t, kind: EventKind::NewCell, object: None });
        }
        for (j, r) in step.sub_rewards.as_slice().iter().enumerate().take(k) {
            running[j] += r;
            cumulative[j].push(running[j]);
        }
    }
    TrajectoryRendering {
        width: tau.house.grid.first().map_or(0, |r| r.chars().count()),
        height: tau.house.grid.len(),
        grid: tau.house.grid.clone(),
        objects: tau.house.objects.clone(),
        start: tau.start,
        waypoints,
        events,
        objectives: tau.task.kind.objectives().iter().map(|s| s.to_string()).collect(),
        cumulative,
        weights: tau.weights.clone(),
        outcome: tau.outcome.clone(),
    }
}
