//! Session registry: every mutation is appended to the session log before it
//! becomes visible or is answered.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::Utc;
use mopref_core::env::{EnvConfig, HouseLayout};
use mopref_core::infer::Hyperplane;
use mopref_core::policy::{Checkpoint, Policy};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::error::{ServiceError, ServiceResult};
use crate::render::{render, TrajectoryRendering};
use crate::session::{
    generate_query, preview_rollout, session_houses, CreateRequest, EstimateSnapshot, FinalResult, LabelChoice,
    LabelRecord, Mode, PendingQuery, QueryBody, SessionEvent, SessionMeta, SessionState, Status,
};
use crate::store::{read_events, EventLog};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    /// Directory of the UI bundle, served for unmatched GET paths.
    pub static_dir: Option<PathBuf>,
    /// Seed for sessions created without one.
    pub default_seed: u64,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig { data_dir: data_dir.into(), static_dir: None, default_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub id: Uuid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    pub objectives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryView {
    pub session: Uuid,
    pub query_id: String,
    pub index: u64,
    pub mode: Mode,
    pub m: usize,
    pub objectives: Vec<String>,
    pub first: Vec<TrajectoryRendering>,
    pub second: Vec<TrajectoryRendering>,
    pub returns_first: Vec<Vec<f64>>,
    pub returns_second: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hyperplane: Option<Hyperplane>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRequest {
    pub query_id: String,
    pub label: LabelChoice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateView {
    pub session: Uuid,
    pub status: Status,
    pub objectives: Vec<String>,
    pub current: EstimateSnapshot,
    pub history: Vec<EstimateSnapshot>,
    pub labels: Vec<LabelRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exhausted: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalView {
    pub session: Uuid,
    pub objectives: Vec<String>,
    pub weights: Vec<f64>,
    pub preview: TrajectoryRendering,
    pub history: Vec<EstimateSnapshot>,
    pub labels: Vec<LabelRecord>,
}

/// A session's complete log, replayable offline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Export {
    pub meta: SessionMeta,
    pub events: Vec<SessionEvent>,
}

impl Export {
    pub fn replay(&self) -> ServiceResult<SessionState> {
        SessionState::replay(&self.events)
    }
}

struct Runtime {
    policy: Arc<Policy>,
    houses: Vec<Arc<HouseLayout>>,
}

struct Slot {
    state: SessionState,
    log: EventLog,
    runtime: Option<Runtime>,
    /// Renderings of the pending query, keyed by its id.
    cached: Option<(String, Arc<QueryView>)>,
}

pub struct Service {
    config: ServiceConfig,
    sessions: RwLock<HashMap<Uuid, Arc<Mutex<Slot>>>>,
    checkpoints: Mutex<HashMap<String, (Arc<Policy>, EnvConfig)>>,
}

fn objective_names(state: &SessionState) -> Vec<String> {
    state.meta.task.objectives().iter().map(|s| s.to_string()).collect()
}

fn view(state: &SessionState, q: &PendingQuery) -> QueryView {
    let (t1, t2) = q.body.trajectories();
    let (r1, r2) = q.body.returns();
    QueryView {
        session: state.id(),
        query_id: q.id.clone(),
        index: q.index,
        mode: state.meta.mode,
        m: state.meta.m,
        objectives: objective_names(state),
        first: t1.into_iter().map(render).collect(),
        second: t2.into_iter().map(render).collect(),
        returns_first: r1,
        returns_second: r2,
        hyperplane: match &q.body {
            QueryBody::Group(g) => Some(g.hyperplane.clone()),
            QueryBody::Pair(_) => None,
        },
    }
}

impl Service {
    /// Opens the data directory and replays every session log in it.
    pub fn open(config: ServiceConfig) -> ServiceResult<Service> {
        std::fs::create_dir_all(&config.data_dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&config.data_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let (log, events) = EventLog::open(&path)?;
            if events.is_empty() {
                log::warn!("{}: empty session log ignored", path.display());
                continue;
            }
            let state = SessionState::replay(&events)?;
            sessions.insert(state.id(), Arc::new(Mutex::new(Slot { state, log, runtime: None, cached: None })));
        }
        Ok(Service { config, sessions: RwLock::new(sessions), checkpoints: Mutex::new(HashMap::new()) })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn session_ids(&self) -> Vec<Uuid> {
        let mut ids: Vec<Uuid> = self.sessions.read().expect("session map poisoned").keys().copied().collect();
        ids.sort();
        ids
    }

    fn slot(&self, id: Uuid) -> ServiceResult<Arc<Mutex<Slot>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    fn load_checkpoint(&self, path: &str) -> ServiceResult<(Arc<Policy>, EnvConfig)> {
        let mut cache = self.checkpoints.lock().expect("checkpoint cache poisoned");
        if let Some(hit) = cache.get(path) {
            return Ok(hit.clone());
        }
        let ck = Checkpoint::read(Path::new(path))
            .map_err(|e| ServiceError::BadRequest(format!("cannot load checkpoint '{path}': {e}")))?;
        let policy = ck.policy().map_err(|e| ServiceError::BadRequest(format!("bad checkpoint '{path}': {e}")))?;
        let entry = (Arc::new(policy), ck.house);
        cache.insert(path.to_string(), entry.clone());
        Ok(entry)
    }

    fn runtime(&self, meta: &SessionMeta) -> ServiceResult<Runtime> {
        let (policy, house) = self.load_checkpoint(&meta.checkpoint)?;
        if policy.task != meta.task {
            return Err(ServiceError::BadRequest(format!(
                "checkpoint was trained for {}, session task is {}",
                policy.task, meta.task
            )));
        }
        Ok(Runtime { policy, houses: session_houses(meta, &house)? })
    }

    fn ensure_runtime(&self, slot: &mut Slot) -> ServiceResult<()> {
        if slot.runtime.is_none() {
            slot.runtime = Some(self.runtime(&slot.state.meta)?);
        }
        Ok(())
    }

    /// Next-query event for `state`, or an exhaustion event.
    fn next_query_event(state: &SessionState, rt: &Runtime) -> ServiceResult<SessionEvent> {
        let at = Utc::now();
        match generate_query(state, &rt.policy, &rt.houses) {
            Ok(query) => Ok(SessionEvent::Query { at, query }),
            Err(ServiceError::Exhausted(reason)) => Ok(SessionEvent::Exhausted { at, reason }),
            Err(e) => Err(e),
        }
    }

    /// Applies `events` to a copy of the state, logs them, then commits.
    fn commit(slot: &mut Slot, events: Vec<SessionEvent>) -> ServiceResult<()> {
        let mut next = slot.state.clone();
        for e in &events {
            next.apply(e)?;
        }
        slot.log.append(&events)?;
        slot.state = next;
        Ok(())
    }

    pub fn create(&self, req: CreateRequest) -> ServiceResult<CreateResponse> {
        let id = Uuid::new_v4();
        let meta = SessionMeta::from_request(&req, id, self.config.default_seed)?;
        let runtime = self.runtime(&meta)?;
        let at = Utc::now();
        let mut state = SessionState::create(meta.clone(), at)?;
        let first = Self::next_query_event(&state, &runtime)?;
        state.apply(&first)?;
        let mut log = EventLog::create(&self.config.data_dir, id)?;
        log.append(&[SessionEvent::Created { at, meta }, first])?;
        let response = CreateResponse {
            id,
            query_id: state.pending.as_ref().map(|q| q.id.clone()),
            objectives: objective_names(&state),
        };
        let slot = Slot { state, log, runtime: Some(runtime), cached: None };
        self.sessions.write().expect("session map poisoned").insert(id, Arc::new(Mutex::new(slot)));
        Ok(response)
    }

    /// The pending query; repeated calls return the same query until it is labelled.
    pub fn query(&self, id: Uuid) -> ServiceResult<Arc<QueryView>> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().expect("session poisoned");
        slot.state.ensure_active()?;
        if slot.state.pending.is_none() {
            if let Some(reason) = &slot.state.exhausted {
                return Err(ServiceError::Exhausted(reason.clone()));
            }
            self.ensure_runtime(&mut slot)?;
            let event = Self::next_query_event(&slot.state, slot.runtime.as_ref().expect("runtime loaded"))?;
            Self::commit(&mut slot, vec![event])?;
            if let Some(reason) = &slot.state.exhausted {
                return Err(ServiceError::Exhausted(reason.clone()));
            }
        }
        let pending = slot.state.pending.clone().expect("pending query present");
        if let Some((qid, v)) = &slot.cached {
            if *qid == pending.id {
                return Ok(v.clone());
            }
        }
        let v = Arc::new(view(&slot.state, &pending));
        slot.cached = Some((pending.id.clone(), v.clone()));
        Ok(v)
    }

    /// Records a label, refits, and prepares the next query.
    pub fn label(&self, id: Uuid, req: LabelRequest) -> ServiceResult<EstimateSnapshot> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().expect("session poisoned");
        let mut next = slot.state.clone();
        let at = Utc::now();
        let label = SessionEvent::Label { at, query_id: req.query_id, label: req.label };
        next.apply(&label)?;
        let snapshot = next.estimate().clone();
        let mut events = vec![label, SessionEvent::Estimate { at, snapshot: snapshot.clone() }];
        // the next query is best effort; a failure here leaves it to the next GET
        if self.ensure_runtime(&mut slot).is_ok() {
            let rt = slot.runtime.as_ref().expect("runtime loaded");
            match Self::next_query_event(&next, rt) {
                Ok(e) => {
                    next.apply(&e)?;
                    events.push(e);
                }
                Err(e) => log::warn!("session {id}: next query failed: {e}"),
            }
        }
        slot.log.append(&events)?;
        slot.state = next;
        Ok(snapshot)
    }

    pub fn estimate(&self, id: Uuid) -> ServiceResult<EstimateView> {
        let slot = self.slot(id)?;
        let slot = slot.lock().expect("session poisoned");
        let s = &slot.state;
        Ok(EstimateView {
            session: id,
            status: s.status,
            objectives: objective_names(s),
            current: s.estimate().clone(),
            history: s.estimates.clone(),
            labels: s.labels.clone(),
            exhausted: s.exhausted.clone(),
        })
    }

    /// Freezes the session at its current estimate; idempotent.
    pub fn finalize(&self, id: Uuid) -> ServiceResult<FinalView> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().expect("session poisoned");
        if slot.state.status == Status::Active {
            if slot.state.informative_labels() == 0 {
                return Err(ServiceError::PreconditionFailed("finalize needs at least one label".into()));
            }
            self.ensure_runtime(&mut slot)?;
            let rt = slot.runtime.as_ref().expect("runtime loaded");
            let preview = preview_rollout(&slot.state, &rt.policy, &rt.houses)?;
            let at = Utc::now();
            let result = FinalResult { weights: slot.state.estimate().weights.clone(), preview, at };
            Self::commit(&mut slot, vec![SessionEvent::Finalize { at, result }])?;
        }
        let s = &slot.state;
        let Some(result) = &s.result else {
            return Err(ServiceError::Conflict("session was aborted".into()));
        };
        Ok(FinalView {
            session: id,
            objectives: objective_names(s),
            weights: result.weights.clone(),
            preview: render(&result.preview),
            history: s.estimates.clone(),
            labels: s.labels.clone(),
        })
    }

    pub fn abort(&self, id: Uuid) -> ServiceResult<()> {
        let slot = self.slot(id)?;
        let mut slot = slot.lock().expect("session poisoned");
        Self::commit(&mut slot, vec![SessionEvent::Abort { at: Utc::now() }])
    }

    pub fn export(&self, id: Uuid) -> ServiceResult<Export> {
        let slot = self.slot(id)?;
        let slot = slot.lock().expect("session poisoned");
        Ok(Export { meta: slot.state.meta.clone(), events: read_events(slot.log.path())? })
    }

    /// Snapshot of the full in-memory state.
    pub fn state(&self, id: Uuid) -> ServiceResult<SessionState> {
        let slot = self.slot(id)?;
        let slot = slot.lock().expect("session poisoned");
        Ok(slot.state.clone())
    }
}
