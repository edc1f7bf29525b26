//! Session state and its event-sourced transitions.
//!
//! A session is the fold of its event log. Everything random is derived from
//! the session seed and a counter, and queries are logged in full, so a log
//! replays to the same state without the policy.

use std::sync::Arc;

use chrono::{DateTime, Utc};
use mopref_core::env::{HouseLayout, TaskSpec};
use mopref_core::infer::{
    apply_group_label, fit_group, fit_pairwise, make_group_query, ConstraintSet, GroupQuery, GroupQueryConfig, Label,
    PairwiseConfig, PreferencePair,
};
use mopref_core::policy::{rollout, Policy, Sampling};
use mopref_core::trajectory::{trajectory_return, Trajectory};
use mopref_core::weights::cosine_similarity;
use mopref_core::{Error as CoreError, RngSeed, TaskKind, WeightVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};

/// Monte Carlo samples behind each feasible-volume estimate.
pub const VOLUME_SAMPLES: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pairwise,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Active,
    Finalized,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelChoice {
    First,
    Second,
    Skip,
}

impl LabelChoice {
    pub fn label(self) -> Option<Label> {
        match self {
            LabelChoice::First => Some(Label::First),
            LabelChoice::Second => Some(Label::Second),
            LabelChoice::Skip => None,
        }
    }
}

impl From<Label> for LabelChoice {
    fn from(l: Label) -> Self {
        match l {
            Label::First => LabelChoice::First,
            Label::Second => LabelChoice::Second,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub mode: Mode,
    /// Group size; pairwise sessions always use 1.
    #[serde(default)]
    pub m: Option<usize>,
    pub task: TaskKind,
    /// Path of the policy checkpoint.
    pub checkpoint: String,
    /// Declared true weights of a simulated user, for benchmarking.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Houses in the session's scene pool.
    #[serde(default)]
    pub houses: Option<usize>,
    #[serde(default)]
    pub sampling: Option<Sampling>,
}

/// Everything fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: Uuid,
    pub mode: Mode,
    pub m: usize,
    pub task: TaskKind,
    pub checkpoint: String,
    pub seed: u64,
    pub houses: usize,
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<f64>>,
}

impl SessionMeta {
    pub const DEFAULT_HOUSES: usize = 8;

    pub fn from_request(req: &CreateRequest, id: Uuid, default_seed: u64) -> ServiceResult<SessionMeta> {
        let m = match req.mode {
            Mode::Pairwise => {
                if req.m.is_some_and(|m| m != 1) {
                    return Err(ServiceError::BadRequest("pairwise sessions compare single trajectories (m = 1)".into()));
                }
                1
            }
            Mode::Group => req.m.unwrap_or(2),
        };
        if m == 0 {
            return Err(ServiceError::BadRequest("group size must be at least 1".into()));
        }
        let houses = req.houses.unwrap_or(Self::DEFAULT_HOUSES);
        if houses == 0 {
            return Err(ServiceError::BadRequest("the scene pool needs at least one house".into()));
        }
        if let Some(r) = &req.reference {
            let w = WeightVector::new(r.clone())?;
            if w.k() != req.task.k() {
                return Err(CoreError::ArityMismatch { expected: req.task.k(), found: w.k() }.into());
            }
        }
        Ok(SessionMeta {
            id,
            mode: req.mode,
            m,
            task: req.task,
            checkpoint: req.checkpoint.clone(),
            seed: req.seed.unwrap_or(default_seed),
            houses,
            sampling: req.sampling.unwrap_or(Sampling::Stochastic),
            reference: req.reference.clone(),
        })
    }

    fn seed(&self) -> RngSeed {
        RngSeed(self.seed)
    }

    pub fn task_spec(&self) -> TaskSpec {
        TaskSpec { kind: self.task, target_category: None }
    }
}

/// Two single trajectories on a shared house and episode seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairQuery {
    pub weights1: Vec<f64>,
    pub weights2: Vec<f64>,
    pub returns1: Vec<f64>,
    pub returns2: Vec<f64>,
    pub house: usize,
    pub episode_seed: u64,
    pub trajectory1: Trajectory,
    pub trajectory2: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueryBody {
    Pair(PairQuery),
    Group(GroupQuery),
}

impl QueryBody {
    pub fn trajectories(&self) -> (Vec<&Trajectory>, Vec<&Trajectory>) {
        match self {
            QueryBody::Pair(p) => (vec![&p.trajectory1], vec![&p.trajectory2]),
            QueryBody::Group(g) => (g.trajectories1.iter().collect(), g.trajectories2.iter().collect()),
        }
    }

    pub fn returns(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        match self {
            QueryBody::Pair(p) => (vec![p.returns1.clone()], vec![p.returns2.clone()]),
            QueryBody::Group(g) => (g.returns1.clone(), g.returns2.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub id: String,
    pub index: u64,
    pub body: QueryBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSnapshot {
    /// Non-skipped labels behind this estimate.
    pub n: usize,
    pub weights: Vec<f64>,
    /// Feasible fraction of the simplex (group sessions).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<f64>,
    /// Cosine similarity to the declared reference weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine: Option<f64>,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub query_id: String,
    pub label: LabelChoice,
    /// Group labels whose constraint would have emptied the feasible region.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rejected: bool,
    pub at: DateTime<Utc>,
}

/// Stored answer to finalize.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalResult {
    pub weights: Vec<f64>,
    /// Greedy rollout at the final weights.
    pub preview: Trajectory,
    pub at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    Created { at: DateTime<Utc>, meta: SessionMeta },
    Query { at: DateTime<Utc>, query: PendingQuery },
    /// No admissible group query is left; the session should be finalized.
    Exhausted { at: DateTime<Utc>, reason: String },
    Label { at: DateTime<Utc>, query_id: String, label: LabelChoice },
    Estimate { at: DateTime<Utc>, snapshot: EstimateSnapshot },
    Finalize { at: DateTime<Utc>, result: FinalResult },
    Abort { at: DateTime<Utc> },
}

impl SessionEvent {
    pub fn at(&self) -> DateTime<Utc> {
        match self {
            SessionEvent::Created { at, .. }
            | SessionEvent::Query { at, .. }
            | SessionEvent::Exhausted { at, .. }
            | SessionEvent::Label { at, .. }
            | SessionEvent::Estimate { at, .. }
            | SessionEvent::Finalize { at, .. }
            | SessionEvent::Abort { at } => *at,
        }
    }
}

/// Full session state; serializes identically after a replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub meta: SessionMeta,
    pub status: Status,
    pub created_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub pairs: Vec<PreferencePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constraints: Option<ConstraintSet>,
    /// Accepted group labels, with trajectories stripped.
    pub history: Vec<(GroupQuery, Label)>,
    pub labels: Vec<LabelRecord>,
    pub pending: Option<PendingQuery>,
    pub queries_issued: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhausted: Option<String>,
    pub estimates: Vec<EstimateSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<FinalResult>,
}

fn corrupt(msg: impl Into<String>) -> ServiceError {
    ServiceError::CorruptLog(msg.into())
}

impl SessionState {
    pub fn create(meta: SessionMeta, at: DateTime<Utc>) -> ServiceResult<SessionState> {
        let k = meta.task.k();
        let constraints = match meta.mode {
            Mode::Group => Some(ConstraintSet::new(k, &mut meta.seed().derive_named("constraints", 0).stream())?),
            Mode::Pairwise => None,
        };
        let mut state = SessionState {
            meta,
            status: Status::Active,
            created_at: at,
            updated_at: at,
            pairs: Vec::new(),
            constraints,
            history: Vec::new(),
            labels: Vec::new(),
            pending: None,
            queries_issued: 0,
            exhausted: None,
            estimates: Vec::new(),
            result: None,
        };
        let first = state.snapshot(WeightVector::uniform(k)?, at)?;
        state.estimates.push(first);
        Ok(state)
    }

    pub fn id(&self) -> Uuid {
        self.meta.id
    }

    pub fn estimate(&self) -> &EstimateSnapshot {
        self.estimates.last().expect("a session always holds its initial estimate")
    }

    /// Labels that carry information (not skipped, not rejected).
    pub fn informative_labels(&self) -> usize {
        self.pairs.len() + self.history.len()
    }

    pub fn ensure_active(&self) -> ServiceResult<()> {
        match self.status {
            Status::Active => Ok(()),
            Status::Finalized => Err(ServiceError::Conflict("session is finalized".into())),
            Status::Aborted => Err(ServiceError::Conflict("session was aborted".into())),
        }
    }

    fn snapshot(&self, w: WeightVector, at: DateTime<Utc>) -> ServiceResult<EstimateSnapshot> {
        let n = self.informative_labels();
        let volume = match &self.constraints {
            Some(c) => Some(c.volume_fraction(VOLUME_SAMPLES, &mut self.meta.seed().derive_named("volume", n as u64).stream())?),
            None => None,
        };
        let cosine = match &self.meta.reference {
            Some(r) => Some(cosine_similarity(&w, &WeightVector::new(r.clone())?)?),
            None => None,
        };
        Ok(EstimateSnapshot { n, weights: w.into_vec(), volume, cosine, at })
    }

    /// Current maximum-likelihood weights from the recorded labels.
    pub fn fit(&self) -> ServiceResult<WeightVector> {
        let k = self.meta.task.k();
        Ok(match self.meta.mode {
            Mode::Pairwise if self.pairs.is_empty() => WeightVector::uniform(k)?,
            Mode::Pairwise => {
                let seed = self.meta.seed().derive_named("fit", self.pairs.len() as u64);
                fit_pairwise(&self.pairs, &PairwiseConfig::default(), seed)?.0
            }
            Mode::Group if self.history.is_empty() => WeightVector::uniform(k)?,
            Mode::Group => fit_group(self.constraints.as_ref().expect("group sessions hold constraints"), &self.history)?.0,
        })
    }

    /// Applies one logged event. Estimate and finalize events are checked
    /// against the recomputed values, which is what makes a log trustworthy.
    pub fn apply(&mut self, event: &SessionEvent) -> ServiceResult<()> {
        match event {
            SessionEvent::Created { .. } => return Err(corrupt("duplicate created event")),
            SessionEvent::Query { query, .. } => {
                self.ensure_active()?;
                if self.pending.is_some() {
                    return Err(corrupt("query issued while another is pending"));
                }
                if query.index != self.queries_issued {
                    return Err(corrupt(format!("query index {} out of sequence", query.index)));
                }
                self.pending = Some(query.clone());
                self.queries_issued += 1;
                self.exhausted = None;
            }
            SessionEvent::Exhausted { reason, .. } => {
                self.ensure_active()?;
                self.exhausted = Some(reason.clone());
            }
            SessionEvent::Label { at, query_id, label } => self.apply_label(query_id, *label, *at)?,
            SessionEvent::Estimate { snapshot, .. } => {
                if snapshot != self.estimate() {
                    return Err(corrupt("logged estimate differs from the recomputed one"));
                }
            }
            SessionEvent::Finalize { result, .. } => {
                self.ensure_active()?;
                if result.weights != self.estimate().weights {
                    return Err(corrupt("finalized weights differ from the last estimate"));
                }
                self.status = Status::Finalized;
                self.pending = None;
                self.result = Some(result.clone());
            }
            SessionEvent::Abort { .. } => {
                self.ensure_active()?;
                self.status = Status::Aborted;
                self.pending = None;
            }
        }
        self.updated_at = event.at();
        Ok(())
    }

    fn apply_label(&mut self, query_id: &str, choice: LabelChoice, at: DateTime<Utc>) -> ServiceResult<()> {
        self.ensure_active()?;
        let pending = match &self.pending {
            Some(p) if p.id == query_id => p.clone(),
            Some(p) => return Err(ServiceError::Conflict(format!("query {query_id} is stale, pending is {}", p.id))),
            None => return Err(ServiceError::Conflict(format!("query {query_id} is not pending"))),
        };
        let mut rejected = false;
        if let Some(label) = choice.label() {
            match &pending.body {
                QueryBody::Pair(p) => self.pairs.push(PreferencePair {
                    r1: p.returns1.clone(),
                    r2: p.returns2.clone(),
                    label,
                    skip: false,
                }),
                QueryBody::Group(g) => {
                    let constraints = self.constraints.as_mut().expect("group sessions hold constraints");
                    let mut rng = self.meta.seed().derive_named("label", pending.index).stream();
                    match apply_group_label(constraints, g, label, &mut rng) {
                        Ok(()) => {
                            let mut stripped = g.clone();
                            stripped.trajectories1.clear();
                            stripped.trajectories2.clear();
                            self.history.push((stripped, label));
                        }
                        Err(CoreError::ConstraintConflict(_)) => rejected = true,
                        Err(e) => return Err(e.into()),
                    }
                }
            }
        }
        self.labels.push(LabelRecord { query_id: query_id.to_string(), label: choice, rejected, at });
        self.pending = None;
        if choice != LabelChoice::Skip && !rejected {
            let w = self.fit()?;
            let snap = self.snapshot(w, at)?;
            self.estimates.push(snap);
        } else {
            let mut snap = self.estimate().clone();
            snap.at = at;
            self.estimates.push(snap);
        }
        Ok(())
    }

    /// Folds a complete event log.
    pub fn replay(events: &[SessionEvent]) -> ServiceResult<SessionState> {
        let Some(SessionEvent::Created { at, meta }) = events.first() else {
            return Err(corrupt("log does not start with a created event"));
        };
        let mut state = SessionState::create(meta.clone(), *at)?;
        for e in &events[1..] {
            state.apply(e)?;
        }
        Ok(state)
    }
}

/// Scene pool of a session, derived from its seed.
pub fn session_houses(meta: &SessionMeta, policy_house: &mopref_core::env::EnvConfig) -> ServiceResult<Vec<Arc<HouseLayout>>> {
    Ok(mopref_core::policy::training_houses(policy_house, meta.houses, meta.seed().derive_named("houses", 0))?)
}

/// Generates query number `index` for the session.
pub fn generate_query(
    state: &SessionState,
    policy: &Policy,
    houses: &[Arc<HouseLayout>],
) -> ServiceResult<PendingQuery> {
    let meta = &state.meta;
    let index = state.queries_issued;
    let seed = meta.seed().derive_named("query", index);
    let task = meta.task_spec();
    let body = match meta.mode {
        Mode::Group => {
            let config = GroupQueryConfig { m: meta.m, sampling: meta.sampling, ..GroupQueryConfig::default() };
            let constraints = state.constraints.as_ref().expect("group sessions hold constraints");
            QueryBody::Group(make_group_query(constraints, &config, policy, houses, &task, seed)?)
        }
        Mode::Pairwise => {
            let mut rng = seed.stream();
            let k = meta.task.k();
            let w1 = WeightVector::sample(k, &mut rng)?;
            let w2 = WeightVector::sample(k, &mut rng)?;
            let house = rng.random_range(0..houses.len());
            let episode_seed: u64 = rng.random();
            let t1 = rollout(policy, houses[house].clone(), &task, &w1, RngSeed(episode_seed), meta.sampling)?;
            let t2 = rollout(policy, houses[house].clone(), &task, &w2, RngSeed(episode_seed), meta.sampling)?;
            QueryBody::Pair(PairQuery {
                returns1: trajectory_return(&t1)?.0,
                returns2: trajectory_return(&t2)?.0,
                weights1: w1.into_vec(),
                weights2: w2.into_vec(),
                house,
                episode_seed,
                trajectory1: t1,
                trajectory2: t2,
            })
        }
    };
    Ok(PendingQuery { id: format!("q{index}"), index, body })
}

/// Greedy rollout at the final weights in the session's first house.
pub fn preview_rollout(state: &SessionState, policy: &Policy, houses: &[Arc<HouseLayout>]) -> ServiceResult<Trajectory> {
    let w = WeightVector::new(state.estimate().weights.clone())?;
    let seed = state.meta.seed().derive_named("preview", 0);
    Ok(rollout(policy, houses[0].clone(), &state.meta.task_spec(), &w, seed, Sampling::Greedy)?)
}
