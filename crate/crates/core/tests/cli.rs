use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/synthetic3.csv")
}

fn qconnect(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qconnect"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = qconnect(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    rdr.records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

#[test]
fn connectedness_is_reproducible_and_finds_the_driver() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixture();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--input",
            input.to_str().unwrap(),
            "--taus",
            "0.05,0.5,0.95",
            "--output-dir",
            out.to_str().unwrap(),
            "connectedness",
        ]);
        out
    };
    let (a, b) = (run("a"), run("b"));
    for file in ["theta.csv", "npdc.csv", "measures.csv"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
    let meta: serde_json::Value =
        serde_json::from_slice(&fs::read(a.join("connectedness.metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["command"], "connectedness");
    assert!(meta["config"]["taus"].is_array());

    // tau,band,series,TO,FROM,NET
    let net: Vec<(String, f64)> = rows(&a.join("measures.csv"))
        .into_iter()
        .filter(|r| r[0] == "0.5" && r[1] == "total" && r[2] != "ALL")
        .map(|r| (r[2].clone(), r[5].parse().unwrap()))
        .collect();
    assert_eq!(net.len(), 3);
    assert!(net[0].1 > 0.0 && net[1].1 < 0.0 && net[2].1 < 0.0, "{net:?}");
    let bands: BTreeSet<String> = rows(&a.join("measures.csv")).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(bands, ["long", "medium", "short", "total"].map(String::from).into());
}

#[test]
fn export_network_points_edges_away_from_the_driver() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    ok(&["--input", fixture().to_str().unwrap(), "--output-dir", out, "connectedness"]);
    ok(&["--output-dir", out, "export-network", "--tau", "0.5", "--band", "total"]);
    let edges = rows(&dir.path().join("edges.csv"));
    for target in ["S2", "S3"] {
        assert!(edges.iter().any(|e| e[0] == "S1" && e[1] == target), "{edges:?}");
    }
    assert!(edges.iter().all(|e| e[1] != "S1"));
    let json: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("network.json")).unwrap()).unwrap();
    assert_eq!(json["nodes"].as_array().unwrap().len(), 3);
}

#[test]
fn rolling_emits_one_date_per_window() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    // 401 prices give 400 returns; a 391 window leaves 10 window ends
    ok(&[
        "--input",
        fixture().to_str().unwrap(),
        "--window",
        "391",
        "--horizon",
        "10",
        "--taus",
        "0.5",
        "--output-dir",
        out,
        "rolling",
    ]);
    let data = rows(&dir.path().join("rolling.csv"));
    let dates: BTreeSet<&str> = data.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(dates.len(), 10);
    let tci_rows = data.iter().filter(|r| r[3] == "ALL" && r[4] == "TCI").count();
    assert_eq!(tci_rows, 10 * 4);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "input = {:?}\nwindow = 391\nhorizon = 10\ntaus = [0.5]\noutput_dir = {:?}\n",
            fixture().to_str().unwrap(),
            dir.path().to_str().unwrap()
        ),
    )
    .unwrap();
    ok(&["--config", cfg.to_str().unwrap(), "--window", "396", "rolling"]);
    let data = rows(&dir.path().join("rolling.csv"));
    let dates: BTreeSet<&str> = data.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(dates.len(), 5);
}

#[test]
fn invalid_runs_exit_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = qconnect(&["--input", "/nonexistent.csv", "--output-dir", dir.path().to_str().unwrap(), "stats"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let out = qconnect(&[
        "--input",
        fixture().to_str().unwrap(),
        "--taus",
        "0.5,1.5",
        "--window",
        "0",
        "--output-dir",
        dir.path().to_str().unwrap(),
        "rolling",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("1.5") && msg.contains("window"), "{msg}");
    assert!(!dir.path().join("rolling.csv").exists());
}
