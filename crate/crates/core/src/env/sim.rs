//! Episode state, transitions and sub-rewards.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::house::{euclid, Cell, HouseLayout, PitchTag};
use crate::error::{Error, Result};
use crate::objectives::TaskKind;
use crate::rng::RngSeed;
use crate::weights::SubRewards;

pub type Pitch = PitchTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    MoveAhead,
    RotateRight,
    RotateLeft,
    Done,
    LookUp,
    LookDown,
}

pub const ACTIONS: [Action; 6] =
    [Action::MoveAhead, Action::RotateRight, Action::RotateLeft, Action::Done, Action::LookUp, Action::LookDown];

impl Action {
    pub fn index(self) -> usize {
        ACTIONS.iter().position(|&a| a == self).unwrap()
    }

    pub fn from_index(i: usize) -> Result<Action> {
        ACTIONS.get(i).copied().ok_or_else(|| Error::invalid(format!("action index {i} out of range")))
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Action> {
        ACTIONS
            .iter()
            .copied()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown action '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Orientation {
    N,
    E,
    S,
    W,
}

impl Orientation {
    pub const ALL: [Orientation; 4] = [Orientation::N, Orientation::E, Orientation::S, Orientation::W];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Orientation::N => (0, -1),
            Orientation::E => (1, 0),
            Orientation::S => (0, 1),
            Orientation::W => (-1, 0),
        }
    }

    pub fn right(self) -> Orientation {
        Orientation::ALL[(self.index() + 1) % 4]
    }

    pub fn left(self) -> Orientation {
        Orientation::ALL[(self.index() + 3) % 4]
    }
}

pub fn pitch_index(p: Pitch) -> usize {
    match p {
        PitchTag::Up => 0,
        PitchTag::Level => 1,
        PitchTag::Down => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    /// Required for object navigation once an episode is set up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_category: Option<String>,
}

impl TaskSpec {
    pub fn object_nav(category: impl Into<String>) -> TaskSpec {
        TaskSpec { kind: TaskKind::ObjectNav, target_category: Some(category.into()) }
    }

    pub fn flee_nav() -> TaskSpec {
        TaskSpec { kind: TaskKind::FleeNav, target_category: None }
    }

    pub fn k(&self) -> usize {
        self.kind.k()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pose {
    pub cell: Cell,
    pub orientation: Orientation,
    pub pitch: Pitch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub cell: Cell,
    pub orientation: Orientation,
    pub pitch: Pitch,
    pub t: usize,
    pub visited: Vec<bool>,
    pub visited_count: usize,
    /// Order-independent hash of the visited set.
    pub visited_hash: u64,
    pub observed: Vec<bool>,
    pub target_observed: bool,
    /// Geodesic distance to the nearest target instance in meters (object navigation).
    pub d_t: f64,
    pub start: Cell,
    pub done: bool,
    pub success: bool,
    pub moves: usize,
    pub collisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub collision: bool,
    pub new_cell: bool,
    pub new_objects: Vec<usize>,
    pub n_unreachable: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub sub_rewards: SubRewards<f64>,
    pub done: bool,
    pub info: StepInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub success: bool,
    /// 0/1 for object navigation, clamped ℓ/ℓmax for flee navigation.
    pub success_value: f64,
    pub episode_length: usize,
    pub path_length_m: f64,
    /// Geodesic start-to-goal distance (object navigation), 0 otherwise.
    pub shortest_path_m: f64,
    /// Farthest Euclidean distance from the start (flee navigation), 0 otherwise.
    pub max_distance_m: f64,
    /// Geodesic distance from the start to the Euclidean-farthest cell (flee navigation).
    pub max_path_m: f64,
    /// Distance to goal (object navigation) or from start (flee navigation) at termination.
    pub final_distance_m: f64,
    pub collisions: usize,
}

pub struct Env {
    layout: Arc<HouseLayout>,
    task: TaskSpec,
    target_field: Vec<u32>,
    d0: f64,
    max_distance_m: f64,
    max_path_m: f64,
    state: EnvState,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Env {
    /// Starts an episode at a seeded random pose.
    pub fn reset(layout: Arc<HouseLayout>, task: &TaskSpec, seed: RngSeed) -> Result<Env> {
        let mut rng = seed.derive_named("reset", 0).stream();
        let mut task = task.clone();
        if task.kind == TaskKind::ObjectNav && task.target_category.is_none() {
            let cats = reachable_categories(&layout);
            if cats.is_empty() {
                return Err(Error::EpisodeSetup("house has no reachable objects".into()));
            }
            task.target_category = Some(cats[rng.random_range(0..cats.len())].clone());
        }
        let target_field = target_field(&layout, &task)?;
        let min_hops = (layout.config.min_start_distance_m / layout.config.cell_size_m).ceil() as u32;
        let candidates: Vec<Cell> = layout
            .free_cells()
            .into_iter()
            .filter(|&c| match task.kind {
                TaskKind::ObjectNav => {
                    let d = target_field[layout.index(c)];
                    d != u32::MAX && d >= min_hops
                }
                TaskKind::FleeNav => true,
            })
            .collect();
        if candidates.is_empty() {
            return Err(Error::EpisodeSetup(format!("no start cell at least {} m from the goal", layout.config.min_start_distance_m)));
        }
        let cell = candidates[rng.random_range(0..candidates.len())];
        let orientation = Orientation::ALL[rng.random_range(0..4)];
        Env::build(layout, task, target_field, Pose { cell, orientation, pitch: PitchTag::Level })
    }

    /// Starts an episode at a fixed pose; used for replay and scripted scenarios.
    pub fn from_pose(layout: Arc<HouseLayout>, task: &TaskSpec, pose: Pose) -> Result<Env> {
        if !layout.is_free(pose.cell) {
            return Err(Error::EpisodeSetup(format!("start cell {:?} is not free", pose.cell)));
        }
        let field = target_field(&layout, task)?;
        Env::build(layout, task.clone(), field, pose)
    }

    fn build(layout: Arc<HouseLayout>, task: TaskSpec, mut target_field: Vec<u32>, pose: Pose) -> Result<Env> {
        let cs = layout.config.cell_size_m;
        let (d0, max_distance_m, max_path_m) = match task.kind {
            TaskKind::ObjectNav => {
                let hops = target_field[layout.index(pose.cell)];
                if hops == u32::MAX {
                    return Err(Error::EpisodeSetup("target unreachable from start".into()));
                }
                (hops as f64 * cs, 0.0, 0.0)
            }
            TaskKind::FleeNav => {
                let far = layout.farthest_distance(pose.cell)?;
                if far <= 0.0 {
                    return Err(Error::EpisodeSetup("house has a single free cell".into()));
                }
                let far_cell = layout.farthest_cell(pose.cell);
                target_field = layout.bfs_field(&[(far_cell, 0)]);
                (0.0, far, layout.shortest_path_distance(pose.cell, far_cell)?)
            }
        };
        let mut visited = vec![false; layout.cell_count()];
        let start_index = layout.index(pose.cell);
        visited[start_index] = true;
        let state = EnvState {
            cell: pose.cell,
            orientation: pose.orientation,
            pitch: pose.pitch,
            t: 0,
            visited,
            visited_count: 1,
            visited_hash: mix(start_index as u64),
            observed: vec![false; layout.objects.len()],
            target_observed: false,
            d_t: d0,
            start: pose.cell,
            done: false,
            success: false,
            moves: 0,
            collisions: 0,
        };
        let mut env = Env { layout, task, target_field, d0, max_distance_m, max_path_m, state };
        // objects in view at the start are observed without reward
        for i in env.visible_objects() {
            env.state.observed[i] = true;
            if env.is_target(i) {
                env.state.target_observed = true;
            }
        }
        Ok(env)
    }

    pub fn layout(&self) -> &Arc<HouseLayout> {
        &self.layout
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn pose(&self) -> Pose {
        Pose { cell: self.state.cell, orientation: self.state.orientation, pitch: self.state.pitch }
    }

    pub fn max_steps(&self) -> usize {
        self.layout.config.max_steps
    }

    /// BFS hops to the nearest target approach cell, or to the cell farthest
    /// from the start in flee navigation.
    pub fn target_field(&self) -> &[u32] {
        &self.target_field
    }

    pub fn initial_distance(&self) -> f64 {
        self.d0
    }

    pub fn max_distance(&self) -> f64 {
        self.max_distance_m
    }

    fn is_target(&self, object: usize) -> bool {
        self.task.target_category.as_deref() == Some(self.layout.objects[object].category.as_str())
            && self.task.kind == TaskKind::ObjectNav
    }

    /// Objects visible from the current pose: in range, inside the view cone,
    /// unobstructed and at the current pitch.
    pub fn visible_objects(&self) -> Vec<usize> {
        let s = &self.state;
        let cfg = &self.layout.config;
        let range = cfg.view_range_m / cfg.cell_size_m;
        let cos_half = (cfg.fov_deg.to_radians() / 2.0).cos();
        let (fx, fy) = s.orientation.delta();
        let mut out = Vec::new();
        for (i, o) in self.layout.objects.iter().enumerate() {
            if o.pitch_tag != s.pitch {
                continue;
            }
            let (vx, vy) = (o.x - s.cell.0, o.y - s.cell.1);
            let dist = ((vx * vx + vy * vy) as f64).sqrt();
            if dist > range + 1e-9 {
                continue;
            }
            if dist > 0.0 && ((vx * fx + vy * fy) as f64) < dist * cos_half - 1e-9 {
                continue;
            }
            if line_of_sight(&self.layout, s.cell, o.cell()) {
                out.push(i);
            }
        }
        out
    }

    pub fn target_visible(&self) -> bool {
        self.visible_objects().into_iter().any(|i| self.is_target(i))
    }

    /// Window cells that are blocked, outside the house, or not reachable from the agent inside the window.
    pub fn n_unreachable(&self) -> usize {
        count_unreachable(&self.layout, self.state.cell, self.layout.config.safety_window)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.state.done {
            return Err(Error::InvalidState("step called on a finished episode".into()));
        }
        let cfg = self.layout.config.clone();
        let mut info = StepInfo { collision: false, new_cell: false, new_objects: Vec::new(), n_unreachable: 0 };
        let d_prev = self.state.d_t;
        let target_seen_before = self.state.target_observed;
        self.state.t += 1;
        match action {
            Action::MoveAhead => {
                let (dx, dy) = self.state.orientation.delta();
                let next = (self.state.cell.0 + dx, self.state.cell.1 + dy);
                if self.layout.is_free(next) {
                    self.state.cell = next;
                    self.state.moves += 1;
                    let idx = self.layout.index(next);
                    if !self.state.visited[idx] {
                        self.state.visited[idx] = true;
                        self.state.visited_count += 1;
                        self.state.visited_hash ^= mix(idx as u64);
                        info.new_cell = true;
                    }
                } else {
                    info.collision = true;
                    self.state.collisions += 1;
                }
            }
            Action::RotateRight => self.state.orientation = self.state.orientation.right(),
            Action::RotateLeft => self.state.orientation = self.state.orientation.left(),
            Action::LookUp => {
                self.state.pitch = match self.state.pitch {
                    PitchTag::Down => PitchTag::Level,
                    _ => PitchTag::Up,
                }
            }
            Action::LookDown => {
                self.state.pitch = match self.state.pitch {
                    PitchTag::Up => PitchTag::Level,
                    _ => PitchTag::Down,
                }
            }
            Action::Done => {}
        }

        for i in self.visible_objects() {
            if !self.state.observed[i] {
                self.state.observed[i] = true;
                info.new_objects.push(i);
                if self.is_target(i) {
                    self.state.target_observed = true;
                }
            }
        }
        if self.task.kind == TaskKind::ObjectNav {
            self.state.d_t = self.target_field[self.layout.index(self.state.cell)] as f64 * cfg.cell_size_m;
        }
        info.n_unreachable = self.n_unreachable();

        let time = cfg.time_penalty;
        let house = match self.task.kind {
            TaskKind::ObjectNav if target_seen_before => 0.0,
            _ if info.new_cell => cfg.r_house_explore,
            _ => 0.0,
        };
        let safety = if info.n_unreachable > cfg.n_safety_threshold {
            -cfg.r_safety * info.n_unreachable as f64
        } else {
            0.0
        };
        let sub_rewards = match self.task.kind {
            TaskKind::ObjectNav => {
                let path = (d_prev - self.state.d_t).max(0.0);
                let n_total = self.layout.objects.len();
                let object = if n_total == 0 {
                    0.0
                } else {
                    cfg.r_object_found * info.new_objects.len() as f64 / n_total as f64
                };
                vec![time, path, house, object, safety]
            }
            TaskKind::FleeNav => vec![time, house, safety],
        };

        if action == Action::Done {
            self.state.done = true;
            if self.task.kind == TaskKind::ObjectNav {
                self.state.success = self.state.d_t <= cfg.success_radius_m + 1e-9 && self.target_visible();
            }
        }
        if self.state.t >= cfg.max_steps {
            self.state.done = true;
        }
        if self.task.kind == TaskKind::FleeNav && self.state.done {
            self.state.success = self.flee_value() >= 0.5;
        }
        Ok(StepOutcome { sub_rewards: SubRewards(sub_rewards), done: self.state.done, info })
    }

    /// Euclidean distance from the start, in meters.
    pub fn distance_from_start(&self) -> f64 {
        euclid(self.state.start, self.state.cell) * self.layout.config.cell_size_m
    }

    fn flee_value(&self) -> f64 {
        (self.distance_from_start() / self.max_distance_m).clamp(0.0, 1.0)
    }

    pub fn outcome(&self) -> Outcome {
        let cs = self.layout.config.cell_size_m;
        let s = &self.state;
        let (success_value, final_distance_m) = match self.task.kind {
            TaskKind::ObjectNav => (if s.success { 1.0 } else { 0.0 }, s.d_t),
            TaskKind::FleeNav => (self.flee_value(), self.distance_from_start()),
        };
        Outcome {
            success: s.success,
            success_value,
            episode_length: s.t,
            path_length_m: s.moves as f64 * cs,
            shortest_path_m: self.d0,
            max_distance_m: self.max_distance_m,
            max_path_m: self.max_path_m,
            final_distance_m,
            collisions: s.collisions,
        }
    }
}

/// Categories with at least one instance the agent can stand next to.
pub fn reachable_categories(layout: &HouseLayout) -> Vec<String> {
    layout
        .categories()
        .into_iter()
        .filter(|c| !layout.approach_sources(c).is_empty())
        .collect()
}

fn target_field(layout: &HouseLayout, task: &TaskSpec) -> Result<Vec<u32>> {
    match task.kind {
        TaskKind::FleeNav => Ok(Vec::new()),
        TaskKind::ObjectNav => {
            let cat = task
                .target_category
                .as_deref()
                .ok_or_else(|| Error::EpisodeSetup("object navigation needs a target category".into()))?;
            let sources = layout.approach_sources(cat);
            if sources.is_empty() {
                return Err(Error::EpisodeSetup(format!("no reachable '{cat}' in this house")));
            }
            Ok(layout.bfs_field(&sources))
        }
    }
}

/// Bresenham line; every cell strictly between the endpoints must be free.
pub fn line_of_sight(layout: &HouseLayout, from: Cell, to: Cell) -> bool {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (x, y) == to {
            return true;
        }
        if (x, y) != from && layout.tile((x, y)).blocked() {
            return false;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

pub fn count_unreachable(layout: &HouseLayout, center: Cell, window: usize) -> usize {
    let half = (window / 2) as i32;
    let side = window as i32;
    let local = |c: Cell| ((c.1 - center.1 + half) * side + (c.0 - center.0 + half)) as usize;
    let inside = |c: Cell| (c.0 - center.0).abs() <= half && (c.1 - center.1).abs() <= half;
    let mut reach = vec![false; window * window];
    let mut stack = vec![center];
    reach[local(center)] = true;
    while let Some(c) = stack.pop() {
        for n in layout.free_neighbors(c) {
            if inside(n) && !reach[local(n)] {
                reach[local(n)] = true;
                stack.push(n);
            }
        }
    }
    let mut n = 0;
    for y in center.1 - half..=center.1 + half {
        for x in center.0 - half..=center.0 + half {
            if !reach[local((x, y))] {
                n += 1;
            }
        }
    }
    n
}
