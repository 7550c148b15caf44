use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn argloop(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_argloop"))
        .args(args)
        .current_dir(dir)
        .env_remove("ARGLOOP_STATE")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

/// A directory with a small synthetic corpus and a finished two-iteration run.
fn workspace() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(&argloop(
        dir.path(),
        &["synth", "--themes", "2", "--per-theme", "30", "--out", "c.jsonl"],
    ));
    ok(&argloop(
        dir.path(),
        &["run", "--corpus", "c.jsonl", "--state", "s.json"],
    ));
    dir
}

#[test]
fn run_creates_state() {
    let dir = workspace();
    let state: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(state["iterations"].as_array().unwrap().len(), 2);
    assert!(!state["talking_points"].as_array().unwrap().is_empty());
    assert!(!dir.path().join("s.json.lock").exists());
    assert!(!dir.path().join("s.json.checkpoint").exists());
}

#[test]
fn resume_reaches_requested_total() {
    let dir = workspace();
    let again = ok(&argloop(dir.path(), &["run", "--state", "s.json"]));
    assert_eq!(again["iterations_run"], 0);
    let more = ok(&argloop(dir.path(), &["run", "--state", "s.json", "--iterations", "3"]));
    assert_eq!(more["iterations_run"], 1);
    assert_eq!(more["iterations_total"], 3);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = argloop(dir.path(), &["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = argloop(dir.path(), &["run", "--state", "s.json", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    ok(&argloop(
        dir.path(),
        &["synth", "--themes", "1", "--per-theme", "10", "--out", "c.jsonl"],
    ));
    std::fs::write(dir.path().join("bad.toml"), "merge_threshold = 1.5\n").unwrap();
    let out = argloop(
        dir.path(),
        &[
            "run", "--corpus", "c.jsonl", "--config", "bad.toml", "--state", "s.json",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("merge_threshold"));
    assert!(!dir.path().join("s.json").exists());

    let out = argloop(
        dir.path(),
        &[
            "run",
            "--corpus",
            "c.jsonl",
            "--state",
            "s.json",
            "--assign-threshold",
            "0",
        ],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn state_from_environment_and_lock() {
    let dir = workspace();
    let sweep = Command::new(env!("CARGO_BIN_EXE_argloop"))
        .args(["eval", "sweep", "--thresholds", "0.6,0.3"])
        .current_dir(dir.path())
        .env("ARGLOOP_STATE", "s.json")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    let points = ok(&sweep);
    let covered: Vec<u64> = points
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["covered"].as_u64().unwrap())
        .collect();
    assert_eq!(covered.len(), 2);
    assert!(covered[0] >= covered[1]);

    std::fs::write(dir.path().join("s.json.lock"), "").unwrap();
    let out = argloop(dir.path(), &["run", "--state", "s.json", "--iterations", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lock"));
}

#[test]
fn corpus_mismatch_is_rejected() {
    let dir = workspace();
    ok(&argloop(
        dir.path(),
        &[
            "synth",
            "--themes",
            "2",
            "--per-theme",
            "30",
            "--seed",
            "8",
            "--out",
            "other.jsonl",
        ],
    ));
    let out = argloop(
        dir.path(),
        &["eval", "sweep", "--state", "s.json", "--corpus", "other.jsonl"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_label_report() {
    let dir = workspace();
    ok(&argloop(
        dir.path(),
        &[
            "eval",
            "sample",
            "--state",
            "s.json",
            "--seed",
            "3",
            "--out",
            "sample.csv",
        ],
    ));
    let text = std::fs::read_to_string(dir.path().join("sample.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut labels = String::from("instance_id,talking_point_id,label\n");
    let mut n = 0;
    for row in rdr.records() {
        let row = row.unwrap();
        labels.push_str(&format!("{},{},1\n", &row[0], &row[1]));
        n += 1;
    }
    assert!(n > 0);
    std::fs::write(dir.path().join("labels.csv"), labels).unwrap();
    let report = ok(&argloop(
        dir.path(),
        &["eval", "report", "--state", "s.json", "--labels", "labels.csv"],
    ));
    let bands = report["bands"].as_array().unwrap();
    assert_eq!(bands.len(), 4);
    assert_eq!(bands[3]["n"], n);
    for b in bands {
        assert_eq!(b["accuracy"], 1.0);
    }
    // labels are stored in the state, so a second report needs no file
    let again = ok(&argloop(dir.path(), &["eval", "report", "--state", "s.json"]));
    assert_eq!(again, report);
}

#[test]
fn bad_labels_file_exits_1() {
    let dir = workspace();
    std::fs::write(
        dir.path().join("labels.csv"),
        "instance_id,talking_point_id,label\na,b,7\n",
    )
    .unwrap();
    let out = argloop(
        dir.path(),
        &["eval", "report", "--state", "s.json", "--labels", "labels.csv"],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn analyses_write_outputs() {
    let dir = workspace();
    let p = dir.path();
    ok(&argloop(
        p,
        &["analyze", "correlate", "--state", "s.json", "--out-dir", "corr"],
    ));
    let long = std::fs::read_to_string(p.join("corr/correlation_long.csv")).unwrap();
    assert!(long.starts_with("tp_id,label,r,n"));
    assert!(p.join("corr/correlation_matrix.csv").exists());

    let shift = ok(&argloop(
        p,
        &[
            "analyze",
            "events",
            "--state",
            "s.json",
            "--date",
            "2021-09-01",
            "--weight",
            "impressions",
        ],
    ));
    assert_eq!(shift["weight"], "impressions");
    assert!(shift["before"].as_array().unwrap().len() <= 4);

    let demo = ok(&argloop(
        p,
        &[
            "analyze",
            "demo",
            "--state",
            "s.json",
            "--age-group",
            "55+",
            "--region",
            "fl",
            "--entities",
            "3",
        ],
    ));
    assert_eq!(demo["spec"]["state"], "FL");
    let out = argloop(
        p,
        &[
            "analyze",
            "demo",
            "--state",
            "s.json",
            "--age-group",
            "55+",
            "--region",
            "ZZ",
        ],
    );
    assert_eq!(out.status.code(), Some(1));

    let counts = ok(&argloop(
        p,
        &[
            "export-stance",
            "--state",
            "s.json",
            "--out-dir",
            "stance",
            "--seed",
            "1",
        ],
    ));
    let lines = |name: &str| {
        std::fs::read_to_string(p.join("stance").join(name))
            .unwrap()
            .lines()
            .count() as u64
    };
    assert_eq!(counts["train"], lines("train.jsonl"));
    assert_eq!(counts["validation"], lines("validation.jsonl"));
    assert_eq!(counts["test"], lines("test.jsonl"));
    let nested = ok(&argloop(
        p,
        &[
            "analyze",
            "export-stance",
            "--state",
            "s.json",
            "--out-dir",
            "stance2",
            "--seed",
            "1",
        ],
    ));
    assert_eq!(nested, counts);
}

#[test]
fn ingest_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&argloop(
        p,
        &["synth", "--themes", "3", "--per-theme", "5", "--out", "c.jsonl"],
    ));
    let summary = ok(&argloop(p, &["ingest", "--corpus", "c.jsonl", "--out", "c.csv"]));
    assert_eq!(summary["instances"], 15);
    let again = ok(&argloop(p, &["ingest", "--corpus", "c.csv"]));
    assert_eq!(again["digest"], summary["digest"]);

    std::fs::write(
        p.join("dup.jsonl"),
        "{\"id\":\"a1\",\"theme\":\"T\",\"body\":\"x\"}\n{\"id\":\"a1\",\"theme\":\"T\",\"body\":\"y\"}\n",
    )
    .unwrap();
    let out = argloop(p, &["ingest", "--corpus", "dup.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("a1"));
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_answers_progress() {
    let dir = workspace();
    let port = free_port();
    let _child = Child(
        Command::new(env!("CARGO_BIN_EXE_argloop"))
            .args(["serve", "--state", "s.json", "--port", &port.to_string()])
            .current_dir(dir.path())
            .env("RUST_LOG", "warn")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let deadline = Instant::now() + Duration::from_secs(20);
    let response = loop {
        if let Some(r) = http_get(port, "/api/progress") {
            break r;
        }
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    assert!(response.contains("\"talking_points\""));
    let lock: PathBuf = dir.path().join("s.json.lock");
    assert!(lock.exists());
}
