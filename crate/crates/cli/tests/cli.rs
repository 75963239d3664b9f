use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use alcoref::active_loop::{ReadBudget, RunManifest};
use alcoref_cli::config::FileConfig;
use alcoref_cli::{Cli, Command as Sub};
use clap::Parser;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_alcoref"));
    for (k, _) in std::env::vars() {
        if k.starts_with("ALCOREF_") {
            c.env_remove(k);
        }
    }
    c.env("ALCOREF_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A tiny source model plus target and test corpora, built once.
fn fixture() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("alcoref-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for (name, n, shift, seed) in [("source", "6", "0", "1"), ("target", "4", "0.5", "3"), ("test", "3", "0.5", "4")] {
            ok(&[
                "synth",
                "--out",
                s(&dir.join(format!("{name}.jsonl"))),
                "--n-docs",
                n,
                "--tokens-per-doc",
                "40",
                "--vocab-shift",
                shift,
                "--seed",
                seed,
            ]);
        }
        ok(&["train-source", "--corpus", s(&dir.join("source.jsonl")), "--out", s(&dir.join("model")), "--epochs", "2"]);
        dir
    })
}

fn base_args(out: &Path) -> Vec<String> {
    let d = fixture();
    [
        "--model",
        s(&d.join("model/source.ckpt")),
        "--corpus",
        s(&d.join("target.jsonl")),
        "--test",
        s(&d.join("test.jsonl")),
        "--out",
        s(out),
        "--epochs",
        "2",
    ]
    .iter()
    .map(|v| v.to_string())
    .collect()
}

fn with<'a>(cmd: &'a str, base: &'a [String], extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(base.iter().map(String::as_str));
    v.extend_from_slice(extra);
    v
}

#[test]
fn help_lists_subcommands() {
    let help = ok(&["--help"]);
    for sub in ["synth", "train-source", "simulate", "grid", "evaluate", "analyze", "serve"] {
        assert!(help.contains(sub), "{sub}");
    }
}

#[test]
fn missing_corpus_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        "--model",
        s(&fixture().join("model/source.ckpt")),
        "--corpus",
        "/nonexistent/target.jsonl",
        "--test",
        s(&fixture().join("test.jsonl")),
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("/nonexistent/target.jsonl") && err.contains("does not exist"), "{err}");

    let out = run(&["simulate", "--out", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing --model"));

    let out = run(&["simulate", "--m", "0"]);
    assert!(!out.status.success());
}

#[test]
fn simulate_writes_artifacts_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let extra = ["--k", "5", "--m", "1", "--cycles", "2", "--repeats", "1", "--seed", "3"];
    let base_a = base_args(a.path());
    let base_b = base_args(b.path());
    ok(&with("simulate", &base_a, &extra));
    ok(&with("simulate", &base_b, &extra));

    let run_id = "ment-ent-k5-m1-s3-r0";
    let dir = a.path().join(run_id);
    let csv = std::fs::read(dir.join("cycles.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.path().join(run_id).join("cycles.csv")).unwrap());
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    for t in 1..=2 {
        assert!(dir.join(format!("checkpoints/cycle-{t}.ckpt")).exists());
    }
    let manifest = RunManifest::load(dir.join("manifest.json")).unwrap();
    assert!(manifest.completed);
    assert_eq!(manifest.config.k, 5);
    assert_eq!(manifest.hyper.max_epochs, 2);
    let labels = std::fs::read_to_string(dir.join("labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 10);
}

#[test]
fn flags_beat_env_beats_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "[run]\nk = 4\ncycles = 1\nrepeats = 1\nm = \"unconstrained\"\nstrategy = \"random\"\n").unwrap();
    let base = base_args(dir.path());

    let out = bin()
        .args(with("simulate", &base, &["--config", s(&config)]))
        .env("ALCOREF_K", "3")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("random-k3-munconstrained-s0-r0").exists());

    let out = bin()
        .args(with("simulate", &base, &["--config", s(&config), "--k", "2"]))
        .env("ALCOREF_K", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("random-k2-munconstrained-s0-r0").exists());

    ok(&with("simulate", &base, &["--config", s(&config)]));
    let m = RunManifest::load(dir.path().join("random-k4-munconstrained-s0-r0/manifest.json")).unwrap();
    assert_eq!(m.config.m, ReadBudget::Unconstrained);
}

#[test]
fn config_file_parses_all_sections() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("all.toml");
    std::fs::write(
        &path,
        r#"
[paths]
model = "m.ckpt"
corpus = "t.jsonl"
[run]
k = 20
m = 5
strategy = "li-clust-ent"
[grid]
ks = [20, 50]
ms = [1, 5, "unconstrained"]
strategies = ["random", "ment-ent"]
jobs = 2
[serve]
port = 9000
[hyper]
learning_rate = 2e-4
"#,
    )
    .unwrap();
    let c = FileConfig::load(Some(&path)).unwrap();
    assert_eq!(c.grid.ms.as_ref().unwrap()[2], ReadBudget::Unconstrained);
    assert_eq!(c.run.m, Some(ReadBudget::Docs(5)));
    assert_eq!(c.serve.port, Some(9000));

    std::fs::write(&path, "[run]\nkk = 1\n").unwrap();
    assert!(FileConfig::load(Some(&path)).is_err());

    let cli = Cli::try_parse_from(["alcoref", "grid", "--ks", "20,50", "--ms", "1,unconstrained", "--jobs", "2"]).unwrap();
    let Sub::Grid(g) = cli.command else { panic!() };
    assert_eq!(g.ks, Some(vec![20, 50]));
    assert_eq!(g.ms, Some(vec![ReadBudget::Docs(1), ReadBudget::Unconstrained]));
}

#[test]
fn grid_runs_aggregates_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let base = base_args(dir.path());
    let extra = [
        "--ks",
        "2,3",
        "--ms",
        "1,2,unconstrained",
        "--strategies",
        "random,ment-ent",
        "--repeats",
        "2",
        "--cycles",
        "1",
        "--jobs",
        "2",
    ];
    let stdout = ok(&with("grid", &base, &extra));
    assert!(stdout.contains("24 runs, 0 already completed, 24 to run"), "{stdout}");
    let agg = std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap();
    // One row per (strategy, k, m, cycle) with cycles 0 and 1.
    assert_eq!(agg.lines().count(), 1 + 2 * 2 * 3 * 2);

    std::fs::remove_dir_all(dir.path().join("random-k2-m1-s0-r1")).unwrap();
    let mut resume = extra.to_vec();
    resume.push("--resume");
    let stdout = ok(&with("grid", &base, &resume));
    assert!(stdout.contains("23 already completed, 1 to run"), "{stdout}");
    assert_eq!(std::fs::read_to_string(dir.path().join("aggregate.csv")).unwrap(), agg);

    let analysis = ok(&["analyze", "--out", s(dir.path())]);
    assert!(analysis.contains("analyzed 24 runs"));
    let types = std::fs::read_to_string(dir.path().join("span_types.csv")).unwrap();
    assert_eq!(types.lines().count(), 25);
    assert!(dir.path().join("errors.csv").exists());
    let timing = std::fs::read_to_string(dir.path().join("timing_summary.csv")).unwrap();
    assert_eq!(timing.lines().count(), 3);
}

#[test]
fn evaluate_prints_scores() {
    let d = fixture();
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("eval.json");
    let stdout = ok(&[
        "evaluate",
        "--model",
        s(&d.join("model/source.ckpt")),
        "--test",
        s(&d.join("test.jsonl")),
        "--out",
        s(&report),
    ]);
    assert!(stdout.starts_with("Avg F1"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    assert_eq!(json["documents"], 3);
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    stream.read_to_string(&mut buf).ok()?;
    Some(buf)
}

fn serve_cmd(port: u16, log_dir: &Path) -> Command {
    let d = fixture();
    let mut c = bin();
    c.args([
        "serve",
        "--model",
        s(&d.join("model/source.ckpt")),
        "--corpus",
        s(&d.join("target.jsonl")),
        "--port",
        &port.to_string(),
        "--log-dir",
        s(log_dir),
    ]);
    c
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_persists_on_sigterm() {
    let dir = tempfile::tempdir().unwrap();
    let port = free_port();
    let mut child = serve_cmd(port, dir.path()).stderr(Stdio::piped()).spawn().unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let health = loop {
        if let Some(r) = http_get(port, "/health") {
            break r;
        }
        assert!(Instant::now() < deadline, "service did not start");
        std::thread::sleep(Duration::from_millis(100));
    };
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains(env!("CARGO_PKG_VERSION")));

    let status = Command::new("kill").args(["-TERM", &child.id().to_string()]).status().unwrap();
    assert!(status.success());
    let exit = child.wait().unwrap();
    assert!(exit.success(), "{exit:?}");
    assert!(dir.path().join("pool.json").exists());

    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let busy = taken.local_addr().unwrap().port();
    let out = serve_cmd(busy, dir.path()).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot bind"));
}
