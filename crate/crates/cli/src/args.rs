use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mopref_core::infer::Aggregation;
use mopref_core::lang::ProviderMode;
use mopref_core::policy::{EncoderMode, Sampling};
use mopref_core::study::StudyMode;
use mopref_core::TaskKind;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "mopref", version, about = "Personalize multi-objective navigation reward weights")]
pub struct Cli {
    /// Root seed; every random draw of the run derives from it.
    #[arg(long, global = true, env = "MOPREF_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Cap on worker threads.
    #[arg(long, global = true, env = "MOPREF_JOBS")]
    pub jobs: Option<usize>,
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate house layouts.
    GenHouse(GenHouseArgs),
    /// Train a weight-conditioned policy.
    Train(TrainArgs),
    /// Roll out a checkpoint at fixed weights and record trajectories.
    Rollout(RolloutArgs),
    /// Infer weights from demonstration trajectories.
    InferDemo(InferDemoArgs),
    /// Infer weights from pairwise or group preferences.
    InferPref(InferPrefArgs),
    /// Infer weights from a language instruction.
    InferLang(InferLangArgs),
    /// Evaluate a checkpoint at uniform and prioritized weights.
    Eval(EvalArgs),
    /// Minimum group size for a target group-label error rate.
    Bound(BoundArgs),
    /// Run a simulated-user study and emit a CSV row.
    SimStudy(SimStudyArgs),
    /// Serve the elicitation API and UI bundle.
    Serve(ServeArgs),
    /// Re-run a recorded resolved config.
    #[serde(skip)]
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenHouse(_) => "gen-house",
            Command::Train(_) => "train",
            Command::Rollout(_) => "rollout",
            Command::InferDemo(_) => "infer-demo",
            Command::InferPref(_) => "infer-pref",
            Command::InferLang(_) => "infer-lang",
            Command::Eval(_) => "eval",
            Command::Bound(_) => "bound",
            Command::SimStudy(_) => "sim-study",
            Command::Serve(_) => "serve",
            Command::Rerun(_) => "rerun",
        }
    }
}

/// House geometry: a named preset, optionally replaced by a JSON file.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct HouseArgs {
    /// small, default or large.
    #[arg(long, default_value = "small")]
    pub preset: String,
    /// JSON house config; overrides the preset.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct GenHouseArgs {
    #[command(flatten)]
    pub house: HouseArgs,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Output directory for house_NNN.json files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, env = "MOPREF_TASK", default_value = "objectnav")]
    pub task: TaskKind,
    /// JSON training config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// codebook, lookup or raw.
    #[arg(long)]
    pub encoder: Option<EncoderMode>,
    #[arg(long)]
    pub imitation_episodes: Option<usize>,
    /// House preset for training houses.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Log a progress line every this many batches.
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Checkpoint path; the batch log goes next to it.
    #[arg(long)]
    pub out: PathBuf,
}

/// A weight vector given inline or by file; inline wins.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct WeightArgs {
    /// Inline JSON array, e.g. '[0.5,0.125,0.125,0.125,0.125]'.
    #[arg(long)]
    pub weights: Option<String>,
    /// Weight file with objectives and weights.
    #[arg(long)]
    pub weights_file: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct RolloutArgs {
    #[arg(long, env = "MOPREF_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    /// House file; houses are generated from the checkpoint's config otherwise.
    #[arg(long)]
    pub house: Option<PathBuf>,
    /// Target category for object navigation; drawn per episode otherwise.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    #[arg(long, default_value = "stochastic")]
    pub sampling: Sampling,
    /// Output directory for trajectory_NNN.json files.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InferDemoArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub demos: Vec<PathBuf>,
    #[arg(long, env = "MOPREF_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub aggregation: Option<Aggregation>,
    /// Known weights to report cosine similarity against.
    #[arg(long)]
    pub reference: Option<String>,
    /// Per-restart loss curves as JSON.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InferPrefArgs {
    #[arg(long, default_value = "group")]
    pub mode: StudyMode,
    /// Trajectories per group; pairwise always shows one per side.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    /// Labelled queries for a simulated user.
    #[arg(long, default_value_t = 25)]
    pub n: usize,
    #[arg(long, env = "MOPREF_CHECKPOINT")]
    pub checkpoint: Option<PathBuf>,
    /// Weight file of the simulated user.
    #[arg(long)]
    pub simulate_user: Option<PathBuf>,
    /// Inline weights of the simulated user; wins over --simulate-user.
    #[arg(long)]
    pub user_weights: Option<String>,
    /// Label queries on the terminal.
    #[arg(long)]
    pub interactive: bool,
    /// Recompute the estimate from an exported session.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 8)]
    pub houses: usize,
    #[arg(long, default_value = "stochastic")]
    pub sampling: Sampling,
    /// Session log directory for interactive runs.
    #[arg(long, env = "MOPREF_DATA_DIR", default_value = "sessions")]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InferLangArgs {
    #[arg(long, env = "MOPREF_TASK", default_value = "objectnav")]
    pub task: TaskKind,
    #[arg(long)]
    pub instruction: String,
    /// Include the in-context examples.
    #[arg(long)]
    pub icl: bool,
    /// Ask for a rationale before the answer.
    #[arg(long)]
    pub cot: bool,
    #[arg(long, default_value = "mock")]
    pub provider: ProviderMode,
    #[arg(long, env = "MOPREF_LLM_ENDPOINT")]
    pub endpoint: Option<String>,
    #[arg(long, env = "MOPREF_LLM_MODEL")]
    pub model: Option<String>,
    /// JSON object of canned responses for mock mode.
    #[arg(long)]
    pub mock_table: Option<PathBuf>,
    #[arg(long)]
    pub audit_log: Option<PathBuf>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub retries: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    /// Uniform weights plus one peaked configuration per objective.
    Peaked,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, env = "MOPREF_CHECKPOINT")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub weights: WeightArgs,
    #[arg(long, value_enum)]
    pub sweep: Option<Sweep>,
    /// Peak strength; the task default otherwise.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Held-out validation houses.
    #[arg(long, default_value_t = 20)]
    pub houses: usize,
    #[arg(long, default_value = "stochastic")]
    pub sampling: Sampling,
    /// Table path; `.json` writes JSON, anything else CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BoundArgs {
    #[arg(long, default_value_t = 2.0 / 3.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gap: f64,
    #[arg(long, default_value_t = 2.8)]
    pub c: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    /// Peaked weights cycling through the objectives.
    Peaked,
    /// Weights drawn uniformly from the simplex.
    Uniform,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimStudyArgs {
    /// pairwise or group [default: group].
    #[arg(long)]
    pub mode: Option<StudyMode>,
    /// Group size [default: 2].
    #[arg(long)]
    pub m: Option<usize>,
    /// Labelled queries per user [default: 25].
    #[arg(long)]
    pub n: Option<usize>,
    /// Simulated users [default: 20].
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long, env = "MOPREF_CHECKPOINT")]
    pub checkpoint: PathBuf,
    /// Group-label threshold [default: 2/3].
    #[arg(long)]
    pub alpha: Option<f64>,
    /// How true weights are drawn [default: peaked].
    #[arg(long, value_enum)]
    pub sampler: Option<SamplerKind>,
    /// Peak strength for the peaked sampler; the task default otherwise.
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub houses: usize,
    /// stochastic or greedy [default: stochastic].
    #[arg(long)]
    pub sampling: Option<Sampling>,
    /// Pair trajectories only within one pool episode.
    #[arg(long)]
    pub within_episode: bool,
    /// JSON study config; flags above override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV path; the header is written unless --append finds the file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub append: bool,
    /// Per-user results as JSON.
    #[arg(long)]
    pub results: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, env = "MOPREF_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "MOPREF_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "MOPREF_DATA_DIR", default_value = "sessions")]
    pub data_dir: PathBuf,
    /// Built UI bundle served for unmatched paths.
    #[arg(long, env = "MOPREF_STATIC_DIR")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct RerunArgs {
    /// A recorded *.run.json or run_config.json.
    pub config: PathBuf,
}
