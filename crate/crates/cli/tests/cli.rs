use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn log2ns(store: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_log2ns"))
        .arg("--store")
        .arg(store)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// `(stage, status)` from pipeline output lines.
fn stages(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter(|l| !l.starts_with("digest"))
        .map(|l| {
            let mut it = l.split_whitespace();
            (
                it.next().unwrap().to_string(),
                it.next().unwrap().to_string(),
            )
        })
        .collect()
}

/// Copies the file-based pipeline and its inputs into `dir`.
fn file_project(dir: &Path) -> PathBuf {
    fs::create_dir_all(dir.join("demo")).unwrap();
    fs::copy(fixtures().join("firewall.json"), dir.join("firewall.json")).unwrap();
    fs::copy(fixtures().join("flows.csv"), dir.join("flows.csv")).unwrap();
    let cfg = dir.join("demo/file_pipeline.toml");
    fs::copy(fixtures().join("demo/file_pipeline.toml"), &cfg).unwrap();
    cfg
}

#[test]
fn pipeline_runs_skips_and_reruns_only_compile() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = file_project(dir.path());
    let store = dir.path().join("store");
    let cfg_arg = cfg.to_str().unwrap();

    let first = stdout(&log2ns(&store, &["pipeline", "--config", cfg_arg]));
    let s = stages(&first);
    let names: Vec<&str> = s.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "logs",
            "vocab",
            "pairs",
            "embedding",
            "vectors",
            "clusters",
            "firewall"
        ]
    );
    assert!(s.iter().all(|(_, st)| st == "ran"));

    let second = stdout(&log2ns(&store, &["pipeline", "--config", cfg_arg]));
    assert!(stages(&second).iter().all(|(_, st)| st == "up-to-date"));
    assert_eq!(first.lines().last(), second.lines().last(), "same digest");

    let fw = dir.path().join("firewall.json");
    let edited = fs::read_to_string(&fw)
        .unwrap()
        .replace("\"allow\"", "\"permit\"");
    fs::write(&fw, edited).unwrap();
    let third = stdout(&log2ns(&store, &["pipeline", "--config", cfg_arg]));
    let ran: Vec<String> = stages(&third)
        .into_iter()
        .filter(|(_, st)| st == "ran")
        .map(|(n, _)| n)
        .collect();
    assert_eq!(ran, ["firewall"]);
}

#[test]
fn stage_subcommands_build_a_queryable_store() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let flows = fixtures().join("flows.csv");
    let fw = fixtures().join("firewall.json");

    let out = Command::new(env!("CARGO_BIN_EXE_log2ns"))
        .env("LOG2NS_STORE", &store)
        .args(["ingest", flows.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(stdout(&out).starts_with("logs"));
    assert!(
        store.join("manifest.json").exists(),
        "store taken from the environment"
    );

    let train = stdout(&log2ns(
        &store,
        &[
            "train",
            "--tokens",
            "src_ip,dst_ip,application,dst_region",
            "--dim",
            "8",
            "--epochs",
            "2",
        ],
    ));
    assert_eq!(train.lines().count(), 3);
    stdout(&log2ns(&store, &["cluster", "--k", "3", "--restarts", "2"]));
    stdout(&log2ns(&store, &["compile", fw.to_str().unwrap()]));

    let q = stdout(&log2ns(
        &store,
        &[
            "query",
            "formal: from_zone=Trust to_zone=Untrust dst_ip=42.62.94.2 action=permit",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(&q).unwrap();
    assert_eq!(
        v["payload"]["outcome"]["verdict"]["matched_rule"],
        "BypassFW"
    );

    let q = stdout(&log2ns(&store, &["query", "corr: neighbors(app:dns, k=2)"]));
    let v: serde_json::Value = serde_json::from_str(&q).unwrap();
    assert_eq!(v["payload"]["neighbors"].as_array().unwrap().len(), 2);

    let w = stdout(&log2ns(
        &store,
        &["witness-check", "--n", "50", "--seed", "2"],
    ));
    let v: serde_json::Value = serde_json::from_str(&w).unwrap();
    assert_eq!(v["passed"], 50);
}

#[test]
fn witness_failures_set_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    stdout(&log2ns(
        &store,
        &["ingest", fixtures().join("flows.csv").to_str().unwrap()],
    ));
    let remediated = fixtures().join("firewall_dns_remediated.json");
    stdout(&log2ns(&store, &["compile", remediated.to_str().unwrap()]));
    let out = log2ns(&store, &["witness-check", "--n", "300", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(!v["failures"].as_array().unwrap().is_empty());
}

#[test]
fn malformed_query_points_at_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = log2ns(dir.path(), &["query", "formal: dst_ip=1.2.3.4 bogus"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("position 23"), "{err}");
    assert!(err.contains("^"), "{err}");
}

#[test]
fn serve_refuses_to_start_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    stdout(&log2ns(
        &store,
        &[
            "compile",
            fixtures().join("firewall.json").to_str().unwrap(),
        ],
    ));
    let out = log2ns(&store, &["serve", "--bind", "127.0.0.1:0"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("missing artifacts: logs, embedding, clusters"),
        "{err}"
    );
}

#[test]
fn synth_writes_replayable_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.csv");
    stdout(&log2ns(
        dir.path(),
        &[
            "synth",
            "--firewall",
            fixtures().join("firewall.json").to_str().unwrap(),
            "--rows",
            "40",
            "--seed",
            "5",
            "-o",
            out.to_str().unwrap(),
        ],
    ));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 41);
}
