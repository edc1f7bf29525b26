use std::fs::{self, File};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mopref_core::env::{generate_house, EnvConfig, HouseFile, HouseLayout, TaskSpec};
use mopref_core::infer::{group_size_bound, infer_from_demos, min_group_size, DemoInferConfig, DemoSet};
use mopref_core::lang::{PromptMode, Provider, ProviderConfig};
use mopref_core::metrics::{build_eval_table, EpisodeRecord, EvalRun};
use mopref_core::policy::{rollout_many, training_houses, BatchStats, Checkpoint, Policy, TrainConfig, Trainer};
use mopref_core::study::{run_study, StudyConfig, StudyMode, StudySummary, UserSampler};
use mopref_core::trajectory::{trajectory_return, Trajectory};
use mopref_core::weights::{cosine_similarity, WeightFile};
use mopref_core::{Error, RngSeed, TaskKind, WeightVector};
use mopref_service::session::Mode;
use mopref_service::{CreateRequest, Export, LabelChoice, LabelRequest, Service, ServiceConfig, ServiceError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::args::*;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error(transparent)]
    Service(#[from] ServiceError),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) | CliError::Service(ServiceError::Core(e)) => e.exit_code(),
            CliError::Service(ServiceError::BadRequest(_)) => 3,
            CliError::Service(ServiceError::CorruptLog(_)) => 6,
            CliError::Service(ServiceError::Exhausted(_)) => 8,
            CliError::Service(ServiceError::NotFound(_))
            | CliError::Service(ServiceError::Conflict(_))
            | CliError::Service(ServiceError::PreconditionFailed(_)) => 11,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    pub command: Command,
    /// Configs after presets, files and flag overrides were applied.
    #[serde(default)]
    pub resolved: Value,
}

pub struct Ctx {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub json: bool,
}

impl Ctx {
    fn rng(&self) -> RngSeed {
        RngSeed(self.seed)
    }

    fn record(&self, command: &Command, resolved: Value, path: &Path) -> CliResult<()> {
        let run = RunConfig {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            jobs: self.jobs,
            command: command.clone(),
            resolved,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string_pretty(&run)? + "\n")?;
        Ok(())
    }

    /// JSON to stdout in `--json` mode, the human text otherwise.
    fn emit(&self, value: &Value, human: impl FnOnce() -> String) -> CliResult<()> {
        let text = if self.json { serde_json::to_string_pretty(value)? } else { human() };
        let mut out = std::io::stdout().lock();
        writeln!(out, "{text}")?;
        Ok(())
    }
}

/// Resolved config path for a file output: `ck.json` records into `ck.run.json`.
pub fn record_path_for_file(out: &Path) -> PathBuf {
    out.with_extension("run.json")
}

/// Resolved config path for a directory output.
pub fn record_path_for_dir(out: &Path) -> PathBuf {
    out.join("run_config.json")
}

pub fn run(ctx: &Ctx, command: &Command) -> CliResult<()> {
    match command {
        Command::GenHouse(a) => gen_house(ctx, command, a),
        Command::Train(a) => train(ctx, command, a),
        Command::Rollout(a) => rollout(ctx, command, a),
        Command::InferDemo(a) => infer_demo(ctx, command, a),
        Command::InferPref(a) => infer_pref(ctx, command, a),
        Command::InferLang(a) => infer_lang(ctx, command, a),
        Command::Eval(a) => eval(ctx, command, a),
        Command::Bound(a) => bound(ctx, command, a),
        Command::SimStudy(a) => sim_study(ctx, command, a),
        Command::Serve(a) => serve(ctx, command, a),
        Command::Rerun(a) => rerun(ctx, a),
    }
}

fn rerun(ctx: &Ctx, a: &RerunArgs) -> CliResult<()> {
    let run: RunConfig = serde_json::from_str(&fs::read_to_string(&a.config)?)?;
    log::info!("re-running {} with seed {}", run.command.name(), run.seed);
    let inner = Ctx { seed: run.seed, jobs: run.jobs, json: ctx.json };
    self::run(&inner, &run.command)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn house_config(h: &HouseArgs) -> CliResult<EnvConfig> {
    let mut cfg = match &h.env_config {
        Some(p) => read_json(p)?,
        None => EnvConfig::preset(&h.preset)?,
    };
    if let Some(s) = h.max_steps {
        cfg.max_steps = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a checkpoint; a missing file is a configuration error.
fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, Policy)> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("checkpoint {} not found", path.display())).into());
    }
    let ck = Checkpoint::read(path)?;
    let policy = ck.policy()?;
    Ok((ck, policy))
}

fn parse_inline(text: &str, k: usize) -> CliResult<WeightVector> {
    let values: Vec<f64> =
        serde_json::from_str(text).map_err(|e| Error::MalformedWeights(format!("'{text}' is not a JSON array: {e}")))?;
    if values.len() != k {
        return Err(Error::ArityMismatch { expected: k, found: values.len() }.into());
    }
    Ok(WeightVector::new(values)?)
}

fn read_weight_file(path: &Path, k: usize) -> CliResult<WeightVector> {
    let w = WeightFile::read(path)?.weights()?;
    if w.k() != k {
        return Err(Error::ArityMismatch { expected: k, found: w.k() }.into());
    }
    Ok(w)
}

/// Inline weights win over a weight file, with a warning.
fn resolve_weights(inline: Option<&str>, file: Option<&Path>, k: usize) -> CliResult<Option<WeightVector>> {
    match (inline, file) {
        (Some(text), Some(path)) => {
            log::warn!("inline weights override {}", path.display());
            parse_inline(text, k).map(Some)
        }
        (Some(text), None) => parse_inline(text, k).map(Some),
        (None, Some(path)) => read_weight_file(path, k).map(Some),
        (None, None) => Ok(None),
    }
}

fn task_spec(task: TaskKind, target: Option<String>) -> TaskSpec {
    TaskSpec { kind: task, target_category: target }
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", items.join(", "))
}

fn write_weights(path: &Path, task: TaskKind, w: &WeightVector) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    WeightFile::new(task.objectives(), w).write(path)?;
    Ok(())
}

fn gen_house(ctx: &Ctx, command: &Command, a: &GenHouseArgs) -> CliResult<()> {
    let cfg = house_config(&a.house)?;
    fs::create_dir_all(&a.out)?;
    let mut files = Vec::with_capacity(a.count);
    for i in 0..a.count {
        let layout = generate_house(ctx.rng().derive_named("house", i as u64), &cfg)?;
        let path = a.out.join(format!("house_{i:03}.json"));
        fs::write(&path, serde_json::to_string_pretty(&layout.to_file())? + "\n")?;
        files.push(path);
    }
    ctx.record(command, json!({ "house": cfg }), &record_path_for_dir(&a.out))?;
    ctx.emit(&json!({ "houses": files }), || files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join("\n"))
}

fn train_config(ctx: &Ctx, a: &TrainArgs) -> CliResult<TrainConfig> {
    let mut cfg: TrainConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.episodes {
        cfg.total_episodes = v;
    }
    if let Some(v) = a.batch {
        cfg.episodes_per_batch = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    if let Some(v) = a.encoder {
        cfg.encoder = v;
    }
    if let Some(v) = a.imitation_episodes {
        cfg.imitation_episodes = v;
    }
    if let Some(p) = &a.preset {
        cfg.house = EnvConfig::preset(p)?;
    }
    if let Some(v) = a.max_steps {
        cfg.house.max_steps = v;
    }
    if ctx.jobs.is_some() {
        cfg.jobs = ctx.jobs;
    }
    cfg.validate(a.task)?;
    Ok(cfg)
}

fn summarize_batches(log: &[BatchStats]) -> Value {
    let tail = &log[log.len().saturating_sub(20)..];
    if tail.is_empty() {
        return json!({});
    }
    let n = tail.len() as f64;
    let k = tail[0].mean_sub_returns.len();
    let subs: Vec<f64> = (0..k).map(|j| tail.iter().map(|b| b.mean_sub_returns[j]).sum::<f64>() / n).collect();
    json!({
        "success_rate": tail.iter().map(|b| b.success_rate).sum::<f64>() / n,
        "mean_length": tail.iter().map(|b| b.mean_length).sum::<f64>() / n,
        "mean_sub_returns": subs,
    })
}

fn train(ctx: &Ctx, command: &Command, a: &TrainArgs) -> CliResult<()> {
    let cfg = train_config(ctx, a)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ctx.record(command, json!({ "train": cfg }), &record_path_for_file(&a.out))?;
    let log_path = a.out.with_extension("log.jsonl");
    let mut log_file = std::io::BufWriter::new(File::create(&log_path)?);
    let mut trainer = Trainer::new(a.task, cfg.clone(), ctx.rng())?;
    let mut write_err = None;
    let every = a.log_every.max(1);
    trainer.run(|s| {
        if let Err(e) = serde_json::to_writer(&mut log_file, s).map_err(std::io::Error::from).and_then(|_| writeln!(log_file)) {
            write_err.get_or_insert(e);
        }
        if s.batch % every == 0 {
            log::info!(
                "batch {} episodes {} success {:.2} length {:.1} subs {}",
                s.batch,
                s.episodes,
                s.success_rate,
                s.mean_length,
                fmt_vec(&s.mean_sub_returns)
            );
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    log_file.flush()?;
    Checkpoint::from_policy(trainer.policy(), &cfg.house, Some(&cfg), trainer.episodes_done()).write(&a.out)?;
    let summary = summarize_batches(trainer.log());
    let value = json!({
        "checkpoint": a.out,
        "log": log_path,
        "episodes": trainer.episodes_done(),
        "final": summary,
    });
    ctx.emit(&value, || {
        format!(
            "wrote {} after {} episodes\nfinal success {:.3} length {:.1}",
            a.out.display(),
            trainer.episodes_done(),
            summary["success_rate"].as_f64().unwrap_or(f64::NAN),
            summary["mean_length"].as_f64().unwrap_or(f64::NAN)
        )
    })
}

fn rollout(ctx: &Ctx, command: &Command, a: &RolloutArgs) -> CliResult<()> {
    let (ck, policy) = load_checkpoint(&a.checkpoint)?;
    let w = resolve_weights(a.weights.weights.as_deref(), a.weights.weights_file.as_deref(), policy.k())?
        .ok_or_else(|| CliError::Usage("rollout needs --weights or --weights-file".into()))?;
    if a.episodes == 0 {
        return Err(Error::InvalidArgument("episodes must be at least 1".into()).into());
    }
    let houses = match &a.house {
        Some(p) => vec![Arc::new(HouseLayout::from_file(&read_json::<HouseFile>(p)?)?)],
        None => training_houses(&ck.house, a.episodes, ctx.rng().derive_named("rollout-houses", 0))?,
    };
    let task = task_spec(ck.task, a.target.clone());
    let jobs: Vec<_> = (0..a.episodes)
        .map(|i| (houses[i % houses.len()].clone(), ctx.rng().derive_named("episode", i as u64)))
        .collect();
    let trajectories = rollout_many(&policy, &jobs, &task, &w, a.sampling)?;
    fs::create_dir_all(&a.out)?;
    let mut rows = Vec::new();
    for (i, tau) in trajectories.iter().enumerate() {
        let path = a.out.join(format!("trajectory_{i:03}.json"));
        tau.write(&path)?;
        rows.push(json!({
            "file": path,
            "success": tau.outcome.success_value,
            "length": tau.len(),
            "returns": trajectory_return(tau)?.as_slice(),
        }));
    }
    ctx.record(command, json!({ "weights": w.as_slice(), "house": ck.house }), &record_path_for_dir(&a.out))?;
    ctx.emit(&json!({ "objectives": ck.task.objectives(), "episodes": rows }), || {
        rows.iter()
            .map(|r| {
                format!(
                    "{} success {} length {} returns {}",
                    r["file"].as_str().unwrap_or_default(),
                    r["success"],
                    r["length"],
                    r["returns"]
                )
            })
            .collect::<Vec<_>>()
            .join("\n")
    })
}

fn infer_demo(ctx: &Ctx, command: &Command, a: &InferDemoArgs) -> CliResult<()> {
    let (ck, policy) = load_checkpoint(&a.checkpoint)?;
    let demos = a.demos.iter().map(|p| Trajectory::read(p)).collect::<mopref_core::Result<Vec<_>>>()?;
    let set = DemoSet::new(&demos, &policy)?;
    let mut cfg = DemoInferConfig::default();
    if let Some(r) = a.restarts {
        cfg.restarts = r;
    }
    if let Some(g) = a.aggregation {
        cfg.aggregation = g;
    }
    let reference = a.reference.as_deref().map(|r| parse_inline(r, policy.k())).transpose()?;
    let (w, diag) = infer_from_demos(&set, &policy, &cfg, ctx.rng())?;
    write_weights(&a.out, ck.task, &w)?;
    if let Some(p) = &a.diagnostics {
        fs::write(p, serde_json::to_string_pretty(&diag)? + "\n")?;
    }
    ctx.record(command, json!({ "demo": cfg }), &record_path_for_file(&a.out))?;
    let cosine = reference.as_ref().map(|r| cosine_similarity(&w, r)).transpose()?;
    let value = json!({
        "objectives": ck.task.objectives(),
        "weights": w.as_slice(),
        "loss": diag.loss,
        "flat_landscape": diag.flat_landscape,
        "cosine": cosine,
    });
    ctx.emit(&value, || {
        let mut s = format!("weights {}\nloss {:.6}", fmt_vec(w.as_slice()), diag.loss);
        if diag.flat_landscape {
            s.push_str("\nwarning: the loss is flat over the simplex; the demonstrations carry no weight signal");
        }
        if let Some(c) = cosine {
            s.push_str(&format!("\ncosine {c:.4}"));
        }
        s
    })
}

fn service_mode(mode: StudyMode) -> Mode {
    match mode {
        StudyMode::Pairwise => Mode::Pairwise,
        StudyMode::Group => Mode::Group,
    }
}

fn infer_pref(ctx: &Ctx, command: &Command, a: &InferPrefArgs) -> CliResult<()> {
    let simulate = a.simulate_user.is_some() || a.user_weights.is_some();
    let sources = [simulate, a.interactive, a.replay.is_some()].iter().filter(|s| **s).count();
    if sources != 1 {
        return Err(CliError::Usage(
            "give exactly one of --simulate-user/--user-weights, --interactive or --replay".into(),
        ));
    }
    if let Some(path) = &a.replay {
        let export: Export = read_json(path)?;
        let state = export.replay()?;
        let w = WeightVector::new(state.estimate().weights.clone())?;
        if let Some(out) = &a.out {
            write_weights(out, state.meta.task, &w)?;
            ctx.record(command, Value::Null, &record_path_for_file(out))?;
        }
        let value = json!({
            "objectives": state.meta.task.objectives(),
            "weights": w.as_slice(),
            "labels": state.estimate().n,
        });
        return ctx.emit(&value, || format!("weights {}\ninformative labels {}", fmt_vec(w.as_slice()), state.estimate().n));
    }
    let ck_path = a
        .checkpoint
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument("--checkpoint is required for simulated and interactive runs".into()))?;
    let (ck, policy) = load_checkpoint(ck_path)?;
    if a.interactive {
        return interactive(ctx, a, ck_path, ck.task);
    }
    let w_star = resolve_weights(a.user_weights.as_deref(), a.simulate_user.as_deref(), policy.k())?
        .expect("a simulated user has weights");
    let cfg = StudyConfig {
        mode: a.mode,
        m: if a.mode == StudyMode::Pairwise { 1 } else { a.m },
        n: a.n,
        users: 1,
        alpha: a.alpha,
        sampler: Some(UserSampler::Fixed { weights: w_star.as_slice().to_vec() }),
        sampling: a.sampling,
        ..StudyConfig::default()
    };
    cfg.validate()?;
    if a.houses == 0 {
        return Err(Error::InvalidArgument("houses must be at least 1".into()).into());
    }
    let houses = training_houses(&ck.house, a.houses, ctx.rng().derive_named("houses", 0))?;
    let summary = run_study(&policy, &houses, &task_spec(ck.task, None), &cfg, ctx.rng())?;
    let r = &summary.results[0];
    let w = WeightVector::new(r.w_hat.clone())?;
    if let Some(out) = &a.out {
        write_weights(out, ck.task, &w)?;
        ctx.record(command, json!({ "study": cfg }), &record_path_for_file(out))?;
    }
    let value = json!({
        "objectives": ck.task.objectives(),
        "weights": r.w_hat,
        "truth": r.w_star,
        "cosine": r.cosine,
        "ggi": r.ggi,
        "resampled": r.resampled,
    });
    ctx.emit(&value, || format!("weights {}\ncosine {:.4}\nggi {:.4}", fmt_vec(&r.w_hat), r.cosine, r.ggi))
}

fn interactive(ctx: &Ctx, a: &InferPrefArgs, checkpoint: &Path, task: TaskKind) -> CliResult<()> {
    let svc = Service::open(ServiceConfig { default_seed: ctx.seed, ..ServiceConfig::new(&a.data_dir) })?;
    let created = svc.create(CreateRequest {
        mode: service_mode(a.mode),
        m: Some(if a.mode == StudyMode::Pairwise { 1 } else { a.m }),
        task,
        checkpoint: checkpoint.display().to_string(),
        reference: None,
        seed: Some(ctx.seed),
        houses: Some(a.houses),
        sampling: Some(a.sampling),
    })?;
    let id = created.id;
    let names = task.objectives();
    let stdin = std::io::stdin();
    let mut lines = stdin.lock().lines();
    let mut err = std::io::stderr().lock();
    writeln!(err, "session {id}; answer 1 (first), 2 (second), s (skip), f (finalize) or q (quit)")?;
    loop {
        let q = match svc.query(id) {
            Ok(q) => q,
            Err(ServiceError::Exhausted(msg)) => {
                writeln!(err, "no further queries: {msg}")?;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        writeln!(err, "\nquery {}", q.query_id)?;
        for (side, returns) in [("first", &q.returns_first), ("second", &q.returns_second)] {
            for (j, r) in returns.iter().enumerate() {
                let cols: Vec<String> = names.iter().zip(r).map(|(n, v)| format!("{n}={v:.3}")).collect();
                writeln!(err, "  {side} #{}: {}", j + 1, cols.join(" "))?;
            }
        }
        write!(err, "> ")?;
        err.flush()?;
        let Some(line) = lines.next().transpose()? else { break };
        let label = match line.trim() {
            "1" | "first" => LabelChoice::First,
            "2" | "second" => LabelChoice::Second,
            "s" | "skip" => LabelChoice::Skip,
            "f" | "finalize" => break,
            "q" | "quit" => {
                svc.abort(id)?;
                writeln!(err, "session aborted")?;
                return Ok(());
            }
            other => {
                writeln!(err, "unrecognized answer '{other}'")?;
                continue;
            }
        };
        let snap = svc.label(id, LabelRequest { query_id: q.query_id.clone(), label })?;
        writeln!(err, "estimate {} after {} labels", fmt_vec(&snap.weights), snap.n)?;
    }
    let fin = svc.finalize(id)?;
    let w = WeightVector::new(fin.weights.clone())?;
    if let Some(out) = &a.out {
        write_weights(out, task, &w)?;
    }
    let value = json!({ "session": id, "objectives": names, "weights": fin.weights });
    ctx.emit(&value, || format!("session {id}\nweights {}", fmt_vec(&fin.weights)))
}

fn infer_lang(ctx: &Ctx, command: &Command, a: &InferLangArgs) -> CliResult<()> {
    let mut cfg = ProviderConfig { mode: a.provider, endpoint: a.endpoint.clone(), ..ProviderConfig::default() };
    if let Some(m) = &a.model {
        cfg.model = m.clone();
    }
    cfg.mock_table = a.mock_table.clone();
    cfg.audit_log = a.audit_log.clone();
    if let Some(t) = a.timeout {
        cfg.timeout_secs = t;
    }
    if let Some(r) = a.retries {
        cfg.retries = r;
    }
    let mode = PromptMode { icl: a.icl, cot: a.cot };
    let provider = Provider::from_config(cfg.clone())?;
    let (w, exchanges) = provider.infer(&a.instruction, a.task, mode)?;
    if let Some(out) = &a.out {
        write_weights(out, a.task, &w)?;
        ctx.record(command, json!({ "provider": cfg, "mode": mode }), &record_path_for_file(out))?;
    }
    let value = json!({
        "objectives": a.task.objectives(),
        "weights": w.as_slice(),
        "exchanges": exchanges,
    });
    ctx.emit(&value, || format!("weights {}", fmt_vec(w.as_slice())))
}

fn eval(ctx: &Ctx, command: &Command, a: &EvalArgs) -> CliResult<()> {
    let (ck, policy) = load_checkpoint(&a.checkpoint)?;
    let k = policy.k();
    let custom = resolve_weights(a.weights.weights.as_deref(), a.weights.weights_file.as_deref(), k)?;
    if a.sweep.is_none() && custom.is_none() {
        return Err(CliError::Usage("eval needs --sweep peaked or --weights/--weights-file".into()));
    }
    if a.episodes == 0 || a.houses == 0 {
        return Err(Error::InvalidArgument("episodes and houses must be at least 1".into()).into());
    }
    let nu = a.nu.unwrap_or(ck.task.default_nu());
    let mut configs = vec![("uniform".to_string(), None, WeightVector::uniform(k)?)];
    if a.sweep == Some(Sweep::Peaked) {
        for j in 0..k {
            configs.push(("peaked".into(), Some(j), WeightVector::peaked(k, j, nu)?));
        }
    }
    if let Some(w) = custom {
        configs.push(("custom".into(), None, w));
    }
    let houses = training_houses(&ck.house, a.houses, ctx.rng().derive_named("eval-houses", 0))?;
    let jobs: Vec<_> = (0..a.episodes)
        .map(|e| (houses[e % houses.len()].clone(), ctx.rng().derive_named("episode", e as u64)))
        .collect();
    let task = task_spec(ck.task, None);
    let mut runs = Vec::with_capacity(configs.len());
    for (method, prioritized, w) in &configs {
        let records = rollout_many(&policy, &jobs, &task, w, a.sampling)?
            .iter()
            .map(EpisodeRecord::from_trajectory)
            .collect::<mopref_core::Result<Vec<_>>>()?;
        runs.push(EvalRun { method: method.clone(), prioritized: *prioritized, records });
    }
    let table = build_eval_table(&runs)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let is_json = a.out.extension().is_some_and(|e| e == "json");
    fs::write(&a.out, if is_json { table.to_json()? + "\n" } else { table.to_csv()? })?;
    let weights: Vec<_> = configs.iter().map(|(m, p, w)| json!({ "method": m, "prioritized": p, "weights": w.as_slice() })).collect();
    ctx.record(command, json!({ "nu": nu, "configs": weights, "house": ck.house }), &record_path_for_file(&a.out))?;
    let value = serde_json::to_value(&table)?;
    ctx.emit(&value, || table.to_csv().unwrap_or_default().trim_end().to_string())
}

fn bound(ctx: &Ctx, command: &Command, a: &BoundArgs) -> CliResult<()> {
    let raw = group_size_bound(a.alpha, a.delta, a.gap, a.c)?;
    let m = min_group_size(a.alpha, a.delta, a.gap, a.c)?;
    let value = json!({ "m": m, "raw": raw, "alpha": a.alpha, "delta": a.delta, "gap": a.gap, "c": a.c });
    if let Some(out) = &a.out {
        fs::write(out, serde_json::to_string_pretty(&value)? + "\n")?;
        ctx.record(command, Value::Null, &record_path_for_file(out))?;
    }
    ctx.emit(&value, || format!("M = {m} (raw {raw:.3})"))
}

fn study_config(a: &SimStudyArgs, task: TaskKind) -> CliResult<StudyConfig> {
    let mut cfg: StudyConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => StudyConfig::default(),
    };
    if let Some(v) = a.mode {
        cfg.mode = v;
    }
    if let Some(v) = a.m {
        cfg.m = v;
    }
    if let Some(v) = a.n {
        cfg.n = v;
    }
    if let Some(v) = a.users {
        cfg.users = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.sampling {
        cfg.sampling = v;
    }
    match (a.sampler, a.nu) {
        (Some(SamplerKind::Uniform), _) => cfg.sampler = Some(UserSampler::SimplexUniform),
        (Some(SamplerKind::Peaked), nu) => {
            cfg.sampler = Some(UserSampler::PeakedCycle { nu: nu.unwrap_or(task.default_nu()) })
        }
        (None, Some(nu)) => cfg.sampler = Some(UserSampler::PeakedCycle { nu }),
        (None, None) => {}
    }
    if a.within_episode {
        cfg.pair_within_episode = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sim_study(ctx: &Ctx, command: &Command, a: &SimStudyArgs) -> CliResult<()> {
    let (ck, policy) = load_checkpoint(&a.checkpoint)?;
    let cfg = study_config(a, ck.task)?;
    if a.houses == 0 {
        return Err(Error::InvalidArgument("houses must be at least 1".into()).into());
    }
    let houses = training_houses(&ck.house, a.houses, ctx.rng().derive_named("study-houses", 0))?;
    let summary = run_study(&policy, &houses, &task_spec(ck.task, None), &cfg, ctx.rng())?;
    let row = summary.csv_row();
    if let Some(out) = &a.out {
        let append = a.append && out.is_file();
        let mut f = fs::OpenOptions::new().create(true).append(append).write(true).truncate(!append).open(out)?;
        if !append {
            writeln!(f, "{}", StudySummary::csv_header())?;
        }
        writeln!(f, "{row}")?;
        ctx.record(command, json!({ "study": cfg, "house": ck.house }), &record_path_for_file(out))?;
    }
    if let Some(p) = &a.results {
        fs::write(p, serde_json::to_string_pretty(&summary)? + "\n")?;
    }
    let value = serde_json::to_value(&summary)?;
    ctx.emit(&value, || format!("{}\n{row}", StudySummary::csv_header()))
}

fn serve(ctx: &Ctx, command: &Command, a: &ServeArgs) -> CliResult<()> {
    let mut config = ServiceConfig::new(&a.data_dir);
    config.static_dir = a.static_dir.clone();
    config.default_seed = ctx.seed;
    let service = Arc::new(Service::open(config)?);
    ctx.record(command, Value::Null, &record_path_for_dir(&a.data_dir))?;
    let mut rt = tokio::runtime::Builder::new_multi_thread();
    if let Some(j) = ctx.jobs {
        rt.worker_threads(j.max(1));
    }
    let rt = rt.enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind((a.host.as_str(), a.port)).await?;
        let addr = listener.local_addr()?;
        {
            let mut out = std::io::stdout().lock();
            if ctx.json {
                writeln!(out, "{}", json!({ "listening": format!("http://{addr}") }))?;
            } else {
                writeln!(out, "listening on http://{addr}")?;
            }
            out.flush()?;
        }
        mopref_service::serve(service, listener).await
    })?;
    Ok(())
}
