//! Weights from natural-language instructions through a chat-completion model.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::TaskKind;
use crate::weights::Weights;

const OBJECTNAV_HEADER: &str = "In the object-goal navigation task in ProcTHOR, an agent is placed within a simulated environment containing various rooms and objects. The agent's main goal is to find a specific object in this environment. To assist the agent in its navigation, it can be given different objectives that determine how it behaves during its search. 

Objectives are:
1. Time Efficiency: Aim to find the target object using as few steps as possible.
2. Path Efficiency: Approach the goal using the most direct route. Consider if you're taking the shortest possible path.
3. House Exploration: Strive to explore the house thoroughly. This involves checking many different areas/rooms until you locate the target object.
4. Safety: Navigate while avoiding obstacles and areas where you could get trapped or stuck. 
5. Object Exploration: While finding the target object, try to inspect as many objects as you encounter.

Given a scenario, I want to know the weights over the five objectives (Time Efficiency, Path Efficiency, House Exploration, Safety, Object Exploration).
The weights should be spiked, meaning that the weight of the most important objective should be much higher than the weight of the least important objective.
The answer should be a list of five float numbers, summed to 1.
";

const FLEENAV_HEADER: &str = "In the flee navigation task in ProcTHOR, an agent is placed within a simulated environment with the aim to move as far away as possible from its starting position. The task tests the agent's ability to maximize the distance from its initial location while considering various objectives that determine its behavior.

Objectives are:
1. Time Efficiency: Aim to find the target object using as few steps as possible.
2. House Exploration: Strive to explore the house thoroughly. This involves checking many different areas/rooms until you find the farthest point from the agent\u{2019}s initial location.
3. Safety: Navigate while avoiding obstacles and areas where you could get trapped or stuck.

Given an instruction, I want to know the weights over the four objectives (Time Efficiency, House Exploration, Safety).
The weights should be spiked, meaning that the weight of the most important objective should be much higher than the weight of the least important objective.
";

/// One in-context example: cue word, text, rationale, answer, continuation indent.
pub struct Example {
    pub cue: &'static str,
    pub text: &'static str,
    pub rationale: &'static str,
    pub answer: &'static str,
    indent: &'static str,
}

pub const OBJECTNAV_EXAMPLES: [Example; 6] = [
    Example {
        cue: "Scenario",
        text: "My kid is asleep. Navigate to an apple in the kitchen without making any noise.\"",
        rationale: "Based on the scenario, the agent should prioritize safety the most, assigning 0.6. Other objectives are not mentioned, assigning (1-0.6)/4=0.1 for each objective.",
        answer: "[0.1,0.1,0.1,0.1,0.6]",
        indent: "   ",
    },
    Example {
        cue: "Scenario",
        text: "I am in hurry. I want to find an object before I am late for work.",
        rationale: "Based on the scenario, time efficiency is the most important, assigning 0.6. Other objectives are not mentioned, assigning (1-0.6)/4=0.1 for each objective.",
        answer: "[0.6,0.1,0.1,0.1,0.1]",
        indent: "    ",
    },
    Example {
        cue: "Scenario",
        text: "I want to find a missing object in my house. I looked into every room briefly but I couldn't find it.",
        rationale: "Based on the scenario, the agent should explore the house thoroughly, assigning 0.4 for both house exploration and object exploration. Other objectives are not mentioned, assigning (1-0.4-0.4)/3=0.067 for each objective.",
        answer: "[0.067,0.067,0.4,0.067,0.4]",
        indent: "    ",
    },
    Example {
        cue: "Scenario",
        text: "I bought an expensive furniture in my house. I want to find an object, but I don't want to damage the furniture.",
        rationale: "Based on the scenario, the agent should prioritize safety the most, assigning 0.6. Other objectives are not mentioned, assigning (1-0.6)/4=0.1 for each objective.",
        answer: "[0.1,0.1,0.1,0.1,0.6]",
        indent: "    ",
    },
    Example {
        cue: "Scenario",
        text: "I'm recording a video in the living room. While I'm working on this, I want the agent to find an object for me. I don't want the agent to move around too much since it might be too noisy and appear a lot in the video.",
        rationale: "Based on the scenario, the agent should prioritize path efficiency and time efficiency, assigning 0.4 for each. Other objectives are not mentioned, assigning (1-0.4-0.4)/3=0.067 for each objective.",
        answer: "[0.4,0.4,0.067,0.067,0.067]",
        indent: "    ",
    },
    Example {
        cue: "Scenario",
        text: "I will have a home party this week, but can't find where I put the vase to put on the table. I want to find it surely by today. I have enough time, so I just want the robot to find it.",
        rationale: "Based on the scenario, the agent should prioritize house exploration the most, assigning 0.6. Object exploration is also important, assigning 0.3. Other objectives are not mentioned, assigning (1-0.6-0.3)/3=0.033 for each objective.",
        answer: "[0.033,0.033,0.6,0.033,0.3]",
        indent: "    ",
    },
];

pub const FLEENAV_EXAMPLES: [Example; 6] = [
    Example {
        cue: "Instruction",
        text: "Prioritize getting as far from your starting point as possible, regardless of the number of steps.",
        rationale: "The instruction describes that time efficiency is the least important, assigning 0.2. House exploration and safety are not mentioned but should be important than time efficiency, so they are assigned 0.4 each.",
        answer: "[0.2,0.4,0.4]",
        indent: "   ",
    },
    Example {
        cue: "Instruction",
        text: "Explore the environment thoroughly while avoiding colliding to walls and obstacles.",
        rationale: "The instruction describes that house exploration is the most important, assigning 0.5. Safety is the second priority, assigning 0.4. Time efficiency is not mentioned, so it is assigned 0.1.",
        answer: "[0.1,0.5,0.4]",
        indent: "   ",
    },
    Example {
        cue: "Instruction",
        text: "Your main goal is to explore while distancing from the start.",
        rationale: "The instruction describes that house exploration is the most important, assigning 0.6. Safety and time efficiency are not mentioned, so they are assigned 0.2 each.",
        answer: "[0.2,0.6,0.2]",
        indent: "   ",
    },
    Example {
        cue: "Instruction",
        text: "Safety is key. Move away, but avoid any and all obstacles.",
        rationale: "The instruction describes that safety is the most important, assigning 0.6. House exploration and time efficiency are not mentioned, so they are assigned 0.2 each.",
        answer: "[0.2,0.2,0.6]",
        indent: "   ",
    },
    Example {
        cue: "Instruction",
        text: "Avoid taking too many steps.",
        rationale: "The instruction describes that time efficiency is the most important, assigning 0.6. House exploration and safety are not mentioned, so they are assigned 0.2 each.",
        answer: "[0.6,0.2,0.2]",
        indent: "   ",
    },
    Example {
        cue: "Instruction",
        text: "Prioritize safety first, then exploration.",
        rationale: "The instruction describes that safety is the most important, assigning 0.6. House exploration is the second important, assigning 0.4. Time efficiency is not mentioned, so it is assigned 0.0.",
        answer: "[0.0,0.4,0.6]",
        indent: "   ",
    },
];

pub fn examples(task: TaskKind) -> &'static [Example; 6] {
    match task {
        TaskKind::ObjectNav => &OBJECTNAV_EXAMPLES,
        TaskKind::FleeNav => &FLEENAV_EXAMPLES,
    }
}

/// Prompt variants; chain-of-thought alone is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMode {
    pub icl: bool,
    pub cot: bool,
}

impl Default for PromptMode {
    fn default() -> Self {
        PromptMode { icl: false, cot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task: TaskKind,
    pub mode: PromptMode,
    pub instruction: String,
    pub text: String,
}

pub fn build_prompt(task: TaskKind, instruction: &str, mode: PromptMode) -> Result<PromptSpec> {
    if instruction.trim().is_empty() {
        return Err(Error::invalid("instruction is empty"));
    }
    let (header, cue) = match task {
        TaskKind::ObjectNav => (OBJECTNAV_HEADER, "Scenario"),
        TaskKind::FleeNav => (FLEENAV_HEADER, "Instruction"),
    };
    let mut text = String::from(header);
    if mode.icl {
        text.push_str("\nHere are some examples.\n");
        for (i, ex) in examples(task).iter().enumerate() {
            text.push_str(&format!("{}. {}: {}\n", i + 1, ex.cue, ex.text));
            if mode.cot {
                text.push_str(&format!("{}Rationale: {}\n", ex.indent, ex.rationale));
            }
            text.push_str(&format!("{}Answer: {}\n", ex.indent, ex.answer));
        }
    }
    text.push_str(&format!("\n{cue}: {instruction}\n"));
    if mode.cot {
        text.push_str("Rationale: \n");
    }
    text.push_str("Answer: ");
    Ok(PromptSpec { task, mode, instruction: instruction.to_string(), text })
}

/// A parsed answer: the listed numbers verbatim and the validated weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedWeights {
    pub raw: Vec<f64>,
    pub weights: Weights<f64>,
}

/// Sum band inside which an answer is renormalized rather than rejected.
pub const SUM_BAND: (f64, f64) = (0.9, 1.1);

/// Bracketed numeric lists in `text` with their byte offsets.
fn numeric_lists(text: &str) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'[' {
            if let Some(end) = text[i + 1..].find(']') {
                let inner = &text[i + 1..i + 1 + end];
                if !inner.contains('[') {
                    let parsed: std::result::Result<Vec<f64>, _> =
                        inner.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    if let Ok(v) = parsed {
                        if !v.is_empty() && v.iter().all(|x| x.is_finite()) {
                            out.push((i, v));
                        }
                    }
                }
            }
        }
        i += 1;
    }
    out
}

/// Extracts the answer list: the last list after the last `Answer:` cue,
/// else the last list anywhere.
pub fn parse_weights(response: &str, k: usize) -> Result<ParsedWeights> {
    let lists = numeric_lists(response);
    let cue = response.rfind("Answer:");
    let chosen = cue
        .and_then(|c| lists.iter().rev().find(|(pos, _)| *pos > c))
        .or_else(|| lists.last())
        .map(|(_, v)| v.clone())
        .ok_or_else(|| Error::ParseFailure("no bracketed numeric list in the response".into()))?;
    if chosen.len() != k {
        return Err(Error::ArityMismatch { expected: k, found: chosen.len() });
    }
    if let Some(bad) = chosen.iter().find(|v| **v < 0.0) {
        return Err(Error::MalformedWeights(format!("negative entry {bad}")));
    }
    let total: f64 = chosen.iter().sum();
    if !(SUM_BAND.0..=SUM_BAND.1).contains(&total) {
        return Err(Error::MalformedWeights(format!(
            "entries sum to {total}, outside [{}, {}]",
            SUM_BAND.0, SUM_BAND.1
        )));
    }
    let weights = if (total - 1.0).abs() <= 1e-9 {
        Weights::new(chosen.clone())?
    } else {
        Weights::new(chosen.iter().map(|v| v / total).collect())?
    };
    Ok(ParsedWeights { raw: chosen, weights })
}

/// `Answer: [a,b,...]` with shortest round-tripping decimals.
pub fn render_answer(values: &[f64]) -> String {
    let items: Vec<String> = values
        .iter()
        .map(|v| {
            let s = format!("{v}");
            if s.contains('.') || s.contains('e') {
                s
            } else {
                format!("{s}.0")
            }
        })
        .collect();
    format!("Answer: [{}]", items.join(","))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProviderMode {
    Live,
    #[default]
    Mock,
}

impl std::str::FromStr for ProviderMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "live" => Ok(ProviderMode::Live),
            "mock" => Ok(ProviderMode::Mock),
            other => Err(Error::invalid(format!("unknown provider mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Base address; requests go to `{endpoint}/chat/completions`.
    pub endpoint: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub timeout_secs: f64,
    pub retries: usize,
    /// JSON object mapping instructions (or their SHA-256 hex) to responses.
    pub mock_table: Option<PathBuf>,
    /// Simulated response delay in mock mode.
    pub mock_latency_ms: u64,
    pub audit_log: Option<PathBuf>,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            mode: ProviderMode::Mock,
            endpoint: None,
            model: "gpt-4o-mini".into(),
            token_env: "MOPREF_LLM_TOKEN".into(),
            timeout_secs: 60.0,
            retries: 2,
            mock_table: None,
            mock_latency_ms: 0,
            audit_log: None,
        }
    }
}

/// Sends one user message, returns the reply text.
pub trait Transport: Send + Sync {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String>;
}

/// Minimal chat-completion client.
pub struct HttpTransport {
    endpoint: String,
    model: String,
    token: String,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(config: &ProviderConfig) -> Result<HttpTransport> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::invalid("live provider needs an endpoint"))?;
        let token = std::env::var(&config.token_env)
            .map_err(|_| Error::invalid(format!("live provider needs a token in ${}", config.token_env)))?;
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        Ok(HttpTransport { endpoint: endpoint.trim_end_matches('/').to_string(), model: config.model.clone(), token, client })
    }
}

impl Transport for HttpTransport {
    fn complete(&self, prompt: &str, timeout: Duration) -> Result<String> {
        let body = serde_json::json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .client
            .post(format!("{}/chat/completions", self.endpoint))
            .bearer_auth(&self.token)
            .timeout(timeout)
            .json(&body)
            .send()
            .map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| Error::ProviderUnavailable(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::ProviderUnavailable(format!("provider returned {status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Error::ProviderUnavailable(format!("unexpected response shape: {value}")))
    }
}

pub fn instruction_hash(instruction: &str) -> String {
    hex::encode(Sha256::digest(instruction.as_bytes()))
}

/// Canned responses keyed by instruction hash; seeded with the prompt examples.
#[derive(Debug, Clone, Default)]
pub struct MockTable {
    responses: HashMap<String, Vec<String>>,
}

impl MockTable {
    pub fn builtin() -> MockTable {
        let mut t = MockTable::default();
        for ex in OBJECTNAV_EXAMPLES.iter().chain(FLEENAV_EXAMPLES.iter()) {
            t.insert(ex.text, &format!("Rationale: {}\nAnswer: {}", ex.rationale, ex.answer));
        }
        t
    }

    /// Later inserts for the same instruction are returned on later calls.
    pub fn insert(&mut self, instruction: &str, response: &str) {
        self.responses.entry(instruction_hash(instruction)).or_default().push(response.to_string());
    }

    pub fn read(path: &Path) -> Result<MockTable> {
        let map: HashMap<String, serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let mut t = MockTable::builtin();
        for (key, value) in map {
            let key = if key.len() == 64 && key.chars().all(|c| c.is_ascii_hexdigit()) { key } else { instruction_hash(&key) };
            let list = match value {
                serde_json::Value::String(s) => vec![s],
                serde_json::Value::Array(items) => {
                    items.into_iter().map(|v| v.as_str().map(str::to_string)).collect::<Option<Vec<_>>>().ok_or_else(
                        || Error::invalid("mock table values must be strings or arrays of strings"),
                    )?
                }
                _ => return Err(Error::invalid("mock table values must be strings or arrays of strings")),
            };
            t.responses.insert(key, list);
        }
        Ok(t)
    }

    fn lookup(&self, instruction: &str, attempt: usize) -> Option<&str> {
        let list = self.responses.get(&instruction_hash(instruction))?;
        list.get(attempt.min(list.len() - 1)).map(String::as_str)
    }
}

/// Record of one model call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmExchange {
    pub timestamp: f64,
    pub task: TaskKind,
    pub mode: PromptMode,
    pub instruction: String,
    pub attempt: usize,
    pub prompt: String,
    pub response: Option<String>,
    pub weights: Option<Vec<f64>>,
    pub error: Option<String>,
    pub latency_ms: f64,
    pub provider: ProviderMode,
    pub model: String,
}

/// Append-only JSON-lines log guarded by one writer.
pub struct AuditLog {
    file: Mutex<std::fs::File>,
}

impl AuditLog {
    pub fn open(path: &Path) -> Result<AuditLog> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog { file: Mutex::new(file) })
    }

    pub fn append(&self, exchange: &LlmExchange) -> Result<()> {
        let mut line = serde_json::to_string(exchange)?;
        line.push('\n');
        let mut f = self.file.lock().map_err(|_| Error::invalid("audit log lock poisoned"))?;
        f.write_all(line.as_bytes())?;
        f.flush()?;
        Ok(())
    }
}

pub const FORMAT_REMINDER: &str =
    "Reply with a final line of the form Answer: [w1,...,wK] listing one non-negative number per objective, summing to 1.";

pub struct Provider {
    config: ProviderConfig,
    mock: MockTable,
    transport: Box<dyn Transport>,
    audit: Option<AuditLog>,
}

/// Refuses every call; stands in for the network in mock mode.
struct Offline;

impl Transport for Offline {
    fn complete(&self, _: &str, _: Duration) -> Result<String> {
        Err(Error::ProviderUnavailable("network transport is disabled in mock mode".into()))
    }
}

impl Provider {
    pub fn from_config(config: ProviderConfig) -> Result<Provider> {
        let transport: Box<dyn Transport> = match config.mode {
            ProviderMode::Live => Box::new(HttpTransport::new(&config)?),
            ProviderMode::Mock => Box::new(Offline),
        };
        Provider::with_transport(config, transport)
    }

    /// Uses `transport` for live calls; mock mode never touches it.
    pub fn with_transport(config: ProviderConfig, transport: Box<dyn Transport>) -> Result<Provider> {
        if !(config.timeout_secs > 0.0) {
            return Err(Error::invalid("timeout must be positive"));
        }
        let mock = match &config.mock_table {
            Some(p) => MockTable::read(p)?,
            None => MockTable::builtin(),
        };
        let audit = config.audit_log.as_deref().map(AuditLog::open).transpose()?;
        Ok(Provider { config, mock, transport, audit })
    }

    pub fn mock_table_mut(&mut self) -> &mut MockTable {
        &mut self.mock
    }

    fn call_once(&self, instruction: &str, prompt: &str, attempt: usize) -> Result<String> {
        let timeout = Duration::from_secs_f64(self.config.timeout_secs);
        match self.config.mode {
            ProviderMode::Live => self.transport.complete(prompt, timeout),
            ProviderMode::Mock => {
                let latency = Duration::from_millis(self.config.mock_latency_ms);
                if latency > timeout {
                    std::thread::sleep(timeout);
                    return Err(Error::ProviderUnavailable(format!("mock call timed out after {timeout:?}")));
                }
                std::thread::sleep(latency);
                self.mock
                    .lookup(instruction, attempt)
                    .map(str::to_string)
                    .ok_or_else(|| Error::ProviderUnavailable(format!("no mock response for '{instruction}'")))
            }
        }
    }

    /// One logical request with transport retries.
    fn call(&self, instruction: &str, prompt: &str, attempt: usize) -> Result<String> {
        let mut last = None;
        for _ in 0..=self.config.retries {
            match self.call_once(instruction, prompt, attempt) {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::warn!("provider call failed: {e}");
                    last = Some(e);
                }
            }
        }
        Err(Error::ProviderUnavailable(format!(
            "gave up after {} attempts: {}",
            self.config.retries + 1,
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }

    fn record(&self, exchange: &LlmExchange) -> Result<()> {
        match &self.audit {
            Some(log) => log.append(exchange),
            None => Ok(()),
        }
    }

    /// Prompts the model, parses the answer, and retries once with a format reminder.
    pub fn infer(&self, instruction: &str, task: TaskKind, mode: PromptMode) -> Result<(Weights<f64>, Vec<LlmExchange>)> {
        let spec = build_prompt(task, instruction, mode)?;
        let mut exchanges = Vec::new();
        let mut responses = Vec::new();
        let mut last_err = None;
        for attempt in 0..2 {
            let prompt = if attempt == 0 { spec.text.clone() } else { format!("{}\n{FORMAT_REMINDER}", spec.text) };
            let started = Instant::now();
            let reply = self.call(instruction, &prompt, attempt);
            let mut exchange = LlmExchange {
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
                task,
                mode,
                instruction: instruction.to_string(),
                attempt,
                prompt,
                response: None,
                weights: None,
                error: None,
                latency_ms: started.elapsed().as_secs_f64() * 1e3,
                provider: self.config.mode,
                model: self.config.model.clone(),
            };
            let text = match reply {
                Ok(t) => t,
                Err(e) => {
                    exchange.error = Some(e.to_string());
                    self.record(&exchange)?;
                    return Err(e);
                }
            };
            exchange.response = Some(text.clone());
            let parsed = parse_weights(&text, task.k());
            match &parsed {
                Ok(p) => exchange.weights = Some(p.weights.as_slice().to_vec()),
                Err(e) => exchange.error = Some(e.to_string()),
            }
            self.record(&exchange)?;
            exchanges.push(exchange);
            responses.push(text);
            match parsed {
                Ok(p) => return Ok((p.weights, exchanges)),
                Err(e) => last_err = Some(e),
            }
        }
        let raw = responses.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(" | ");
        Err(match last_err {
            Some(Error::ArityMismatch { expected, found }) => Error::ArityMismatch { expected, found },
            Some(Error::MalformedWeights(m)) => Error::MalformedWeights(format!("{m}; responses: {raw}")),
            Some(e) => Error::ParseFailure(format!("{e}; responses: {raw}")),
            None => Error::ParseFailure(format!("no answer; responses: {raw}")),
        })
    }
}
