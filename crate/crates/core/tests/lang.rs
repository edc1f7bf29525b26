use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mopref_core::lang::*;
use mopref_core::{Error, TaskKind};

const BOTH: PromptMode = PromptMode { icl: true, cot: true };

#[test]
fn icl_cot_prompts_match_the_fixed_templates() {
    let obj = build_prompt(TaskKind::ObjectNav, "{}", BOTH).unwrap();
    assert_eq!(obj.text, include_str!("fixtures/objectnav_icl_cot.txt"));
    let flee = build_prompt(TaskKind::FleeNav, "{}", BOTH).unwrap();
    assert_eq!(flee.text, include_str!("fixtures/fleenav_icl_cot.txt"));
}

#[test]
fn prompt_structure_by_mode() {
    let full = build_prompt(TaskKind::ObjectNav, "Find the mug quickly.", BOTH).unwrap().text;
    assert!(full.contains("The weights should be spiked"));
    assert_eq!(full.matches("Scenario:").count(), 7);
    assert!(full.trim_end().ends_with("Answer:"));

    let cot = build_prompt(TaskKind::ObjectNav, "Find the mug quickly.", PromptMode::default()).unwrap().text;
    assert!(!cot.contains("Here are some examples."));
    assert!(cot.contains("\nScenario: Find the mug quickly.\nRationale: \nAnswer: "));

    let icl = build_prompt(TaskKind::ObjectNav, "x", PromptMode { icl: true, cot: false }).unwrap().text;
    assert_eq!(icl.matches("Rationale:").count(), 0);
    assert_eq!(icl.matches("Answer:").count(), 7);

    let flee = build_prompt(TaskKind::FleeNav, "Run.", PromptMode::default()).unwrap().text;
    let listed = flee.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit()) && l.contains(": ")).count();
    assert_eq!(listed, 3);
    assert!(flee.contains("Instruction: Run."));

    assert_eq!(build_prompt(TaskKind::FleeNav, "Run.", BOTH).unwrap(), build_prompt(TaskKind::FleeNav, "Run.", BOTH).unwrap());
    assert!(build_prompt(TaskKind::ObjectNav, "  ", BOTH).is_err());
}

fn literal(answer: &str) -> Vec<f64> {
    answer.trim_matches(['[', ']']).split(',').map(|s| s.parse().unwrap()).collect()
}

#[test]
fn example_answers_round_trip_exactly() {
    for task in [TaskKind::ObjectNav, TaskKind::FleeNav] {
        for ex in examples(task) {
            let expected = literal(ex.answer);
            let parsed = parse_weights(&format!("Rationale: {}\nAnswer: {}", ex.rationale, ex.answer), task.k()).unwrap();
            assert_eq!(parsed.raw, expected);
            assert_eq!(render_answer(&parsed.raw), format!("Answer: {}", ex.answer));
            let again = parse_weights(&render_answer(&parsed.raw), task.k()).unwrap();
            assert_eq!(again, parsed);
            let total: f64 = expected.iter().sum();
            for (w, e) in parsed.weights.as_slice().iter().zip(&expected) {
                assert!((w - e / total).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn parse_examples_and_errors() {
    let p = parse_weights("blah Answer: [0.1,0.1,0.1,0.1,0.6]", 5).unwrap();
    assert_eq!(p.weights.as_slice(), &[0.1, 0.1, 0.1, 0.1, 0.6]);
    assert!(matches!(parse_weights("Answer: [2, 1, 1]", 3), Err(Error::MalformedWeights(_))));
    let third = parse_weights("Answer: [0.33, 0.33, 0.33]", 3).unwrap();
    assert!(third.weights.as_slice().iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-9));
    assert!(matches!(parse_weights("Answer: [0.5, -0.1, 0.6]", 3), Err(Error::MalformedWeights(_))));
    assert!(matches!(parse_weights("Answer: [0.5, 0.5]", 3), Err(Error::ArityMismatch { expected: 3, found: 2 })));
    assert!(matches!(parse_weights("no list here", 3), Err(Error::ParseFailure(_))));
    // last list after the last cue wins; earlier lists are ignored
    let p = parse_weights("[1,0,0] Answer: [0.2,0.2,0.6] see [x] Answer: [0.6,0.2,0.2]", 3).unwrap();
    assert_eq!(p.raw, vec![0.6, 0.2, 0.2]);
    // no cue: fall back to the last list anywhere
    let p = parse_weights("I think [0.3,0.3,0.4]", 3).unwrap();
    assert_eq!(p.raw, vec![0.3, 0.3, 0.4]);
}

struct Sentinel(Arc<AtomicUsize>);

impl Transport for Sentinel {
    fn complete(&self, _: &str, _: Duration) -> mopref_core::Result<String> {
        self.0.fetch_add(1, Ordering::SeqCst);
        panic!("network used in mock mode");
    }
}

fn mock_provider(config: ProviderConfig) -> (Provider, Arc<AtomicUsize>) {
    let calls = Arc::new(AtomicUsize::new(0));
    (Provider::with_transport(config, Box::new(Sentinel(calls.clone()))).unwrap(), calls)
}

#[test]
fn mock_provider_answers_examples_offline_and_logs() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("audit.jsonl");
    let (provider, calls) = mock_provider(ProviderConfig { audit_log: Some(log.clone()), ..ProviderConfig::default() });
    let text = examples(TaskKind::ObjectNav)[1].text;
    let (w, exchanges) = provider.infer(text, TaskKind::ObjectNav, PromptMode::default()).unwrap();
    assert_eq!(w.as_slice(), &[0.6, 0.1, 0.1, 0.1, 0.1]);
    assert_eq!(exchanges.len(), 1);
    assert_eq!(calls.load(Ordering::SeqCst), 0);
    let lines: Vec<LlmExchange> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, exchanges);
    assert!(lines[0].prompt.trim_end().ends_with("Answer:"));
}

#[test]
fn format_reminder_retry_recovers() {
    let (mut provider, _) = mock_provider(ProviderConfig::default());
    provider.mock_table_mut().insert("go fast", "I would go fast.");
    provider.mock_table_mut().insert("go fast", "Answer: [0.8,0.1,0.1]");
    let (w, exchanges) = provider.infer("go fast", TaskKind::FleeNav, PromptMode::default()).unwrap();
    assert_eq!(w.as_slice(), &[0.8, 0.1, 0.1]);
    assert_eq!(exchanges.len(), 2);
    assert!(exchanges[1].prompt.ends_with(FORMAT_REMINDER));
}

#[test]
fn two_unparseable_replies_fail_with_both_attached() {
    let (mut provider, _) = mock_provider(ProviderConfig::default());
    provider.mock_table_mut().insert("be nice", "first prose reply");
    provider.mock_table_mut().insert("be nice", "second prose reply");
    match provider.infer("be nice", TaskKind::FleeNav, PromptMode::default()) {
        Err(Error::ParseFailure(msg)) => {
            assert!(msg.contains("first prose reply") && msg.contains("second prose reply"), "{msg}");
        }
        other => panic!("expected parse failure, got {other:?}"),
    }
}

#[test]
fn slow_mock_times_out_after_retries() {
    let config = ProviderConfig { timeout_secs: 0.01, mock_latency_ms: 200, retries: 2, ..ProviderConfig::default() };
    let (provider, _) = mock_provider(config);
    let text = examples(TaskKind::FleeNav)[0].text;
    match provider.infer(text, TaskKind::FleeNav, PromptMode::default()) {
        Err(Error::ProviderUnavailable(msg)) => assert!(msg.contains("3 attempts"), "{msg}"),
        other => panic!("expected provider-unavailable, got {other:?}"),
    }
}

#[test]
fn mock_table_file_overrides_by_text_or_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mock.json");
    let hashed = instruction_hash("hashed instruction");
    std::fs::write(
        &path,
        serde_json::json!({"plain instruction": "Answer: [0.1,0.1,0.8]", hashed: ["Answer: [0.5,0.25,0.25]"]}).to_string(),
    )
    .unwrap();
    let (provider, _) = mock_provider(ProviderConfig { mock_table: Some(path), ..ProviderConfig::default() });
    let (a, _) = provider.infer("plain instruction", TaskKind::FleeNav, PromptMode::default()).unwrap();
    assert_eq!(a.as_slice(), &[0.1, 0.1, 0.8]);
    let (b, _) = provider.infer("hashed instruction", TaskKind::FleeNav, PromptMode::default()).unwrap();
    assert_eq!(b.as_slice(), &[0.5, 0.25, 0.25]);
    assert!(matches!(
        provider.infer("unknown", TaskKind::FleeNav, PromptMode::default()),
        Err(Error::ProviderUnavailable(_))
    ));
}

/// Serves one canned chat-completion reply and returns the request body.
fn stub_server(reply: &'static str) -> (String, std::thread::JoinHandle<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = BufReader::new(stream.try_clone().unwrap());
        let mut length = 0;
        let mut auth = String::new();
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let lower = line.to_ascii_lowercase();
            if let Some(v) = lower.strip_prefix("content-length:") {
                length = v.trim().parse().unwrap();
            }
            if lower.starts_with("authorization:") {
                auth = line.trim().to_string();
            }
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; length];
        reader.read_exact(&mut body).unwrap();
        let payload = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": reply}}]}).to_string();
        let mut stream = stream;
        write!(stream, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}", payload.len())
            .unwrap();
        format!("{auth}\n{}", String::from_utf8(body).unwrap())
    });
    (format!("http://{addr}/v1"), handle)
}

#[test]
fn live_transport_speaks_chat_completions() {
    let (endpoint, server) = stub_server("Rationale: safety first.\nAnswer: [0.1,0.2,0.7]");
    std::env::set_var("MOPREF_TEST_LLM_TOKEN", "secret-token");
    let dir = tempfile::tempdir().unwrap();
    let config = ProviderConfig {
        mode: ProviderMode::Live,
        endpoint: Some(endpoint),
        token_env: "MOPREF_TEST_LLM_TOKEN".into(),
        model: "stub-model".into(),
        audit_log: Some(dir.path().join("audit.jsonl")),
        ..ProviderConfig::default()
    };
    let provider = Provider::from_config(config).unwrap();
    let (w, _) = provider.infer("Stay safe.", TaskKind::FleeNav, PromptMode::default()).unwrap();
    assert_eq!(w.as_slice(), &[0.1, 0.2, 0.7]);
    let request = server.join().unwrap();
    assert!(request.contains("Bearer secret-token"));
    let body: serde_json::Value = serde_json::from_str(request.lines().nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "stub-model");
    assert!(body["messages"][0]["content"].as_str().unwrap().contains("Instruction: Stay safe."));
    assert_eq!(std::fs::read_to_string(dir.path().join("audit.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn live_mode_requires_endpoint_and_token() {
    let no_endpoint = ProviderConfig { mode: ProviderMode::Live, ..ProviderConfig::default() };
    assert!(Provider::from_config(no_endpoint).is_err());
    let no_token = ProviderConfig {
        mode: ProviderMode::Live,
        endpoint: Some("http://127.0.0.1:9".into()),
        token_env: "MOPREF_TEST_UNSET_TOKEN".into(),
        ..ProviderConfig::default()
    };
    assert!(Provider::from_config(no_token).is_err());
}
