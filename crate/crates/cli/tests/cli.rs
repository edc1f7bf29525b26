use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use mopref_core::env::EnvConfig;
use mopref_core::policy::{Checkpoint, EncoderMode, Policy};
use mopref_core::{RngSeed, TaskKind};
use mopref_service::session::Mode;
use mopref_service::{CreateRequest, LabelChoice, LabelRequest, Service, ServiceConfig};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mopref"));
    for var in ["MOPREF_SEED", "MOPREF_JOBS", "MOPREF_TASK", "MOPREF_CHECKPOINT", "MOPREF_DATA_DIR", "MOPREF_PORT"] {
        c.env_remove(var);
    }
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn checkpoint(dir: &Path, task: TaskKind) -> PathBuf {
    let policy = Policy::new(task, EncoderMode::Codebook, 16, RngSeed(2));
    let path = dir.join(format!("{task}.ck.json"));
    let house = EnvConfig { max_steps: 40, ..EnvConfig::small() };
    Checkpoint::from_policy(&policy, &house, None, 0).write(&path).unwrap();
    path
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    std::fs::read(path).unwrap()
}

fn weights_of(path: impl AsRef<Path>) -> Vec<f64> {
    let v: Value = serde_json::from_slice(&read(path)).unwrap();
    serde_json::from_value(v["weights"].clone()).unwrap()
}

#[test]
fn bound_matches_the_reference_value() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["bound", "--alpha", "0.6667", "--delta", "0.05", "--gap", "0.5", "--c", "2.8"]);
    assert_eq!(out.trim(), "M = 5 (raw 4.996)");
    let json: Value = serde_json::from_str(&ok(tmp.path(), &["--json", "bound"])).unwrap();
    assert_eq!(json["m"], 5);
    assert!((json["raw"].as_f64().unwrap() - 4.996).abs() < 1e-3);
}

#[test]
fn exit_codes_follow_error_classes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(tmp.path(), &["bound", "--frobnicate"])), 2);
    assert_eq!(code(&run(tmp.path(), &["no-such-command"])), 2);
    assert_eq!(code(&run(tmp.path(), &["bound", "--alpha", "0.4"])), 3);
    let missing = run(tmp.path(), &["sim-study", "--checkpoint", "missing.json"]);
    assert_eq!(code(&missing), 3);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck = ck.to_str().unwrap();
    assert_eq!(code(&run(tmp.path(), &["sim-study", "--checkpoint", ck, "--n", "0"])), 3);
    assert_eq!(code(&run(tmp.path(), &["rollout", "--checkpoint", ck, "--out", "r"])), 2, "weights are required");
    assert_eq!(code(&run(tmp.path(), &["rollout", "--checkpoint", ck, "--weights", "[0.5,0.5]", "--out", "r"])), 3);
    assert_eq!(code(&run(tmp.path(), &["rollout", "--checkpoint", ck, "--weights", "half", "--out", "r"])), 3);
    assert_eq!(code(&run(tmp.path(), &["infer-pref", "--checkpoint", ck])), 2, "a label source is required");
    let unknown = run(tmp.path(), &["infer-lang", "--instruction", "Find a mug and take the scenic route."]);
    assert_eq!(code(&unknown), 10, "mock provider has no canned answer");
}

#[test]
fn gen_house_is_deterministic_and_records_its_config() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["--seed", "7", "gen-house", "--count", "3", "--out", "a"]);
    ok(tmp.path(), &["--seed", "7", "gen-house", "--count", "3", "--out", "b"]);
    ok(tmp.path(), &["--seed", "8", "gen-house", "--count", "1", "--out", "c"]);
    for i in 0..3 {
        let f = format!("house_{i:03}.json");
        assert_eq!(read(tmp.path().join("a").join(&f)), read(tmp.path().join("b").join(&f)));
    }
    assert_ne!(read(tmp.path().join("a/house_000.json")), read(tmp.path().join("c/house_000.json")));
    let cfg: Value = serde_json::from_slice(&read(tmp.path().join("a/run_config.json"))).unwrap();
    assert_eq!(cfg["seed"], 7);
    assert_eq!(cfg["command"]["subcommand"], "gen-house");
    assert_eq!(cfg["resolved"]["house"]["width"], 14);

    // the recorded config alone reproduces the run
    std::fs::remove_dir_all(tmp.path().join("b")).unwrap();
    std::fs::rename(tmp.path().join("a"), tmp.path().join("orig")).unwrap();
    ok(tmp.path(), &["rerun", "orig/run_config.json"]);
    for i in 0..3 {
        let f = format!("house_{i:03}.json");
        assert_eq!(read(tmp.path().join("orig").join(&f)), read(tmp.path().join("a").join(&f)));
    }
}

#[test]
fn env_vars_override_defaults() {
    let tmp = TempDir::new().unwrap();
    bin().current_dir(tmp.path()).env("MOPREF_SEED", "7").args(["gen-house", "--out", "env"]).output().unwrap();
    ok(tmp.path(), &["--seed", "7", "gen-house", "--out", "flag"]);
    assert_eq!(read(tmp.path().join("env/house_000.json")), read(tmp.path().join("flag/house_000.json")));
}

#[test]
fn rollout_and_demo_inference_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck = ck.to_str().unwrap();
    let w = "[0.5,0.125,0.125,0.125,0.125]";
    for out in ["r1", "r2"] {
        ok(tmp.path(), &["--seed", "3", "rollout", "--checkpoint", ck, "--weights", w, "--episodes", "3", "--out", out]);
    }
    for i in 0..3 {
        let f = format!("trajectory_{i:03}.json");
        assert_eq!(read(tmp.path().join("r1").join(&f)), read(tmp.path().join("r2").join(&f)));
    }
    let demos: Vec<String> = (0..3).map(|i| format!("r1/trajectory_{i:03}.json")).collect();
    for out in ["w1.json", "w2.json"] {
        let mut args = vec!["--seed", "3", "infer-demo", "--checkpoint", ck, "--restarts", "2", "--out", out, "--demos"];
        args.extend(demos.iter().map(String::as_str));
        ok(tmp.path(), &args);
    }
    assert_eq!(read(tmp.path().join("w1.json")), read(tmp.path().join("w2.json")));
    let w1 = weights_of(tmp.path().join("w1.json"));
    assert_eq!(w1.len(), 5);
    assert!((w1.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(tmp.path().join("w1.run.json").is_file());
}

#[test]
fn inline_weights_win_over_a_weight_file() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::FleeNav);
    let ck = ck.to_str().unwrap();
    std::fs::write(
        tmp.path().join("w.json"),
        r#"{"objectives":["time_efficiency","house_exploration","safety"],"weights":[0.8,0.1,0.1]}"#,
    )
    .unwrap();
    let out = bin()
        .current_dir(tmp.path())
        .args(["--json", "rollout", "--checkpoint", ck, "--weights", "[0.1,0.1,0.8]", "--weights-file", "w.json", "--out", "r"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("inline weights override"));
    let tau: Value = serde_json::from_slice(&read(tmp.path().join("r/trajectory_000.json"))).unwrap();
    assert_eq!(tau["weights"], serde_json::json!([0.1, 0.1, 0.8]));
    ok(tmp.path(), &["rollout", "--checkpoint", ck, "--weights-file", "w.json", "--out", "f"]);
    let tau: Value = serde_json::from_slice(&read(tmp.path().join("f/trajectory_000.json"))).unwrap();
    assert_eq!(tau["weights"], serde_json::json!([0.8, 0.1, 0.1]));
}

#[test]
fn eval_sweep_emits_uniform_and_peaked_rows() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck = ck.to_str().unwrap();
    ok(tmp.path(), &["eval", "--checkpoint", ck, "--sweep", "peaked", "--episodes", "6", "--houses", "2", "--out", "t.csv"]);
    let csv = String::from_utf8(read(tmp.path().join("t.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("method,prioritized,episodes,success,spl,episode_length,raw_time_efficiency"));
    assert!(lines[1].starts_with("uniform,,6,"));
    assert!(lines[2].starts_with("peaked,time_efficiency,6,"));
    let resolved: Value = serde_json::from_slice(&read(tmp.path().join("t.run.json"))).unwrap();
    assert_eq!(resolved["resolved"]["nu"], 4.0);
    assert_eq!(resolved["resolved"]["configs"][1]["weights"], serde_json::json!([0.5, 0.125, 0.125, 0.125, 0.125]));
}

#[test]
fn sim_study_writes_a_csv_row() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck = ck.to_str().unwrap();
    let args = ["sim-study", "--mode", "group", "--m", "1", "--n", "2", "--users", "2", "--houses", "2", "--checkpoint", ck];
    let mut first = args.to_vec();
    first.extend(["--out", "s.csv"]);
    ok(tmp.path(), &first);
    let mut again = args.to_vec();
    again.extend(["--out", "s.csv", "--append"]);
    ok(tmp.path(), &again);
    let csv = String::from_utf8(read(tmp.path().join("s.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "mode,m,n,users,trajectories_per_user,mean_cosine,std_cosine,mean_ggi");
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[1], lines[2], "same seed, same row");
    assert!(lines[1].starts_with("group,1,2,2,4,"));
}

#[test]
fn mock_language_inference_reproduces_the_prompt_example() {
    let tmp = TempDir::new().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "--json",
            "infer-lang",
            "--instruction",
            "I am in hurry. I want to find an object before I am late for work.",
            "--icl",
            "--cot",
            "--out",
            "w.json",
        ],
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["weights"], serde_json::json!([0.6, 0.1, 0.1, 0.1, 0.1]));
    assert_eq!(weights_of(tmp.path().join("w.json")), vec![0.6, 0.1, 0.1, 0.1, 0.1]);
    let prompt = v["exchanges"][0]["prompt"].as_str().unwrap();
    assert!(prompt.contains("Here are some examples."));
    assert!(prompt.trim_end().ends_with("Answer:"));
}

#[test]
fn preference_inference_simulated_and_replayed() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck_s = ck.to_str().unwrap();
    let out = ok(
        tmp.path(),
        &[
            "--json",
            "infer-pref",
            "--mode",
            "pairwise",
            "--n",
            "20",
            "--checkpoint",
            ck_s,
            "--user-weights",
            "[0.6,0.1,0.1,0.1,0.1]",
            "--houses",
            "2",
            "--out",
            "p.json",
        ],
    );
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["truth"], serde_json::json!([0.6, 0.1, 0.1, 0.1, 0.1]));
    let c = v["cosine"].as_f64().unwrap();
    assert!((0.0..=1.0 + 1e-12).contains(&c));

    // a service session exported to disk replays offline to the same estimate
    let svc = Service::open(ServiceConfig::new(tmp.path().join("sessions"))).unwrap();
    let id = svc
        .create(CreateRequest {
            mode: Mode::Group,
            m: Some(2),
            task: TaskKind::ObjectNav,
            checkpoint: ck_s.to_string(),
            reference: None,
            seed: Some(5),
            houses: Some(2),
            sampling: None,
        })
        .unwrap()
        .id;
    for label in [LabelChoice::First, LabelChoice::Skip, LabelChoice::Second, LabelChoice::First] {
        let q = svc.query(id).unwrap();
        svc.label(id, LabelRequest { query_id: q.query_id.clone(), label }).unwrap();
    }
    let fin = svc.finalize(id).unwrap();
    std::fs::write(tmp.path().join("export.json"), serde_json::to_string(&svc.export(id).unwrap()).unwrap()).unwrap();
    ok(tmp.path(), &["infer-pref", "--replay", "export.json", "--out", "replayed.json"]);
    assert_eq!(weights_of(tmp.path().join("replayed.json")), fin.weights);
}

#[test]
fn interactive_labelling_reads_stdin() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::FleeNav);
    let mut child = bin()
        .current_dir(tmp.path())
        .args(["--json", "infer-pref", "--interactive", "--mode", "group", "--m", "2", "--houses", "2"])
        .args(["--checkpoint", ck.to_str().unwrap(), "--data-dir", "logs", "--out", "w.json"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"1\nmaybe\ns\n2\nf\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("unrecognized answer 'maybe'"));
    assert!(stderr.contains("time_efficiency="));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(weights_of(tmp.path().join("w.json")), serde_json::from_value::<Vec<f64>>(v["weights"].clone()).unwrap());
    let logs: Vec<_> = std::fs::read_dir(tmp.path().join("logs")).unwrap().collect();
    assert_eq!(logs.len(), 1, "one session log");
}

fn http(addr: &str, request: &str) -> String {
    let mut s = std::net::TcpStream::connect(addr).unwrap();
    s.write_all(request.as_bytes()).unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).unwrap();
    buf
}

#[test]
fn serve_answers_http() {
    let tmp = TempDir::new().unwrap();
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let mut child = bin()
        .current_dir(tmp.path())
        .args(["serve", "--port", "0", "--data-dir", "data"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").expect("listening line").to_string();
    let body = format!(r#"{{"mode":"group","m":2,"task":"objectnav","checkpoint":"{}"}}"#, ck.display());
    let created = http(
        &addr,
        &format!(
            "POST /sessions HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        ),
    );
    assert!(created.starts_with("HTTP/1.1 201"), "{created}");
    let missing = http(&addr, "GET /sessions/00000000-0000-0000-0000-000000000000/query HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    assert!(missing.starts_with("HTTP/1.1 404"), "{missing}");
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(tmp.path().join("data/run_config.json").is_file());
}

/// Counts connections to a local listener standing in for every network peer.
fn trap() -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            if stream.is_ok() {
                counter.fetch_add(1, Ordering::SeqCst);
            }
        }
    });
    (addr, hits)
}

#[test]
fn offline_subcommands_open_no_connections() {
    let tmp = TempDir::new().unwrap();
    let (addr, hits) = trap();
    let proxy = format!("http://{addr}");
    let ck = checkpoint(tmp.path(), TaskKind::ObjectNav);
    let ck = ck.to_str().unwrap();
    let runs: Vec<Vec<&str>> = vec![
        vec!["gen-house", "--out", "h"],
        vec!["train", "--episodes", "16", "--batch", "8", "--imitation-episodes", "8", "--max-steps", "20", "--out", "t/ck.json"],
        vec!["rollout", "--checkpoint", ck, "--weights", "[0.2,0.2,0.2,0.2,0.2]", "--out", "r"],
        vec!["infer-demo", "--checkpoint", ck, "--restarts", "1", "--demos", "r/trajectory_000.json", "--out", "d.json"],
        vec!["infer-pref", "--checkpoint", ck, "--n", "2", "--m", "1", "--houses", "1", "--user-weights", "[0.2,0.2,0.2,0.2,0.2]"],
        vec!["infer-lang", "--instruction", "I am in hurry. I want to find an object before I am late for work.", "--endpoint", &proxy],
        vec!["eval", "--checkpoint", ck, "--sweep", "peaked", "--episodes", "2", "--houses", "1", "--out", "e.csv"],
        vec!["bound"],
        vec!["sim-study", "--checkpoint", ck, "--m", "1", "--n", "2", "--users", "1", "--houses", "1"],
    ];
    for args in runs {
        let out = bin()
            .current_dir(tmp.path())
            .env("HTTP_PROXY", &proxy)
            .env("HTTPS_PROXY", &proxy)
            .env("ALL_PROXY", &proxy)
            .env("MOPREF_LLM_ENDPOINT", &proxy)
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(hits.load(Ordering::SeqCst), 0);
    assert!(tmp.path().join("t/ck.json").is_file());
    assert!(tmp.path().join("t/ck.log.jsonl").is_file());
    assert!(tmp.path().join("t/ck.run.json").is_file());
}

#[test]
fn live_provider_does_reach_the_endpoint() {
    // guards the trap above: the same setup does observe a real connection
    let tmp = TempDir::new().unwrap();
    let (addr, hits) = trap();
    let out = bin()
        .current_dir(tmp.path())
        .env("MOPREF_LLM_TOKEN", "test")
        .args(["infer-lang", "--provider", "live", "--endpoint", &format!("http://{addr}"), "--timeout", "0.5"])
        .args(["--retries", "0", "--instruction", "Find a cup quickly."])
        .output()
        .unwrap();
    assert_eq!(code(&out), 10);
    assert!(hits.load(Ordering::SeqCst) >= 1);
}
