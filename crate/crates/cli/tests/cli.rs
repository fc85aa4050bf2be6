use std::path::Path;
use std::process::{Command, Output};

use approx::assert_abs_diff_eq;
use serde_json::Value;

fn sdnctl(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sdnctl"));
    cmd.args(args).env_remove("SDNCTL_SEED");
    cmd
}

fn run(args: &[&str]) -> Output {
    sdnctl(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SCALAR: [&str; 8] = ["--A", "0.25", "--B", "1", "--h", "1", "--d", "2"];

fn with_scalar<'a>(cmd: &'a str, rest: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend(SCALAR);
    v.extend(rest);
    v
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.json");
    std::fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SIM_CONFIG: &str = r#"{
    "plant": {"A": [[0.25]], "B": [[1.0]]},
    "h": 1.0,
    "flows": [{"type": "exponential", "rate": 0.5}, {"type": "exponential", "rate": 0.5}],
    "d": 2,
    "sim": {"horizon": 8, "trials": 200, "x0": [2.0]}
}"#;

#[test]
fn bounds_reports_upper_period() {
    let out = run(&["bounds", "--A", "0.25", "--rbar", "0.4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_abs_diff_eq!(v["h_u"].as_f64().unwrap(), 0.8571, epsilon = 1e-3);
    assert_eq!(v["regime"], "underprovisioned");
    assert!(v["h_l"].as_f64().unwrap() < v["h_u"].as_f64().unwrap());
}

#[test]
fn invalid_rate_names_the_parameter() {
    let out = run(&["bounds", "--A", "0.25", "--rbar", "-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("rbar"), "{}", stderr(&out));
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(run(&[]).status.code(), Some(64));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn dare_exit_codes_follow_verdict() {
    let fast = run(&with_scalar("dare", &["--rate", "0.5", "--rate", "0.5"]));
    assert_eq!(fast.status.code(), Some(0));
    let v = json(&fast);
    assert_eq!(v["stabilizable"], true);
    assert_abs_diff_eq!(v["K"][0][0].as_f64().unwrap(), -0.700465, epsilon = 1e-6);
    assert_abs_diff_eq!(v["P"][0][0].as_f64().unwrap(), 4.258639, epsilon = 1e-6);

    let slow = run(&with_scalar("dare", &["--rate", "0.2", "--rate", "0.2"]));
    assert_eq!(slow.status.code(), Some(2));
    assert_eq!(json(&slow)["stabilizable"], false);
}

#[test]
fn missing_input_is_reported() {
    let out = run(&["discretize", "--A", "0.25", "--B", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains('h'), "{}", stderr(&out));
}

#[test]
fn config_errors_carry_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(
        dir.path(),
        r#"{"flows": [{"type": "exponential", "rate": "fast"}]}"#,
    );
    let out = run(&["dropout", "--config", &path]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("flows[0]"), "{}", stderr(&out));

    let out = run(&[
        "dropout",
        "--config",
        dir.path().join("absent.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SIM_CONFIG);
    let from_config = json(&run(&["dropout", "--config", &path]));
    assert_abs_diff_eq!(
        from_config["p"].as_f64().unwrap(),
        (-2.0f64).exp(),
        epsilon = 1e-12
    );
    let overridden = json(&run(&["dropout", "--config", &path, "--d", "3"]));
    assert_abs_diff_eq!(
        overridden["p"].as_f64().unwrap(),
        (-3.0f64).exp(),
        epsilon = 1e-12
    );
    assert_eq!(overridden["deadline"].as_f64(), Some(3.0));
}

#[test]
fn json_output_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("dle.json");
    let args = with_scalar(
        "dle",
        &[
            "--p",
            "0.1",
            "--output",
            target.to_str().unwrap(),
            "--grid-step",
            "0.05",
        ],
    );
    let out = run(&args);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(v["feasible"], true);
    assert!(v["lifted_spectral_radius"].as_f64().unwrap() < 1.0);
    assert_eq!(
        v["grid"]["p"].as_array().unwrap().len(),
        v["grid"]["spectral_radius"].as_array().unwrap().len()
    );
}

#[test]
fn tables_match_golden_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["tables", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let t1 = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
    let t2 = std::fs::read_to_string(dir.path().join("table2.csv")).unwrap();
    let mut l1 = t1.lines();
    assert_eq!(l1.next(), Some("A,rbar,h_u,h_l"));
    assert_eq!(l1.next(), Some("0.600000,1.00000,0.382429,0.377892"));
    assert_eq!(l1.next(), Some("0.700000,1.00000,0.256858,0.253424"));
    assert_eq!(t1.lines().count(), 15);
    let mut l2 = t2.lines();
    assert_eq!(l2.next(), Some("A,rbar,h_u,h_l,delta_h"));
    assert_eq!(
        l2.next(),
        Some("0.500000,0.900000,0.528766,0.523993,0.00477336")
    );
    assert_eq!(t2.lines().count(), 7);
}

#[test]
fn seed_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SIM_CONFIG);
    let with_env = |seed: &str, extra: &[&str]| {
        let mut args = vec!["simulate", "--config", &path];
        args.extend(extra);
        let out = sdnctl(&args).env("SDNCTL_SEED", seed).output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
        out.stdout
    };
    let a = with_env("11", &[]);
    assert_eq!(a, with_env("11", &[]));
    assert_ne!(a, with_env("12", &[]));
    assert_eq!(with_env("99", &["--seed", "11"]), a);

    let bad = sdnctl(&["simulate", "--config", &path])
        .env("SDNCTL_SEED", "x")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn simulate_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_config(dir.path(), SIM_CONFIG);
    let out = run(&["simulate", "--config", &path, "--seed", "4"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,mean_sq,ci_low,ci_high,exact_mean_sq"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first, ["0", "4.00000", "4.00000", "4.00000", "4.00000"]);
    assert_eq!(text.lines().count(), 10);

    let js = run(&["moments", "--config", &path, "--format", "json"]);
    let v = json(&js);
    assert_eq!(v["exact_mean_sq"].as_array().unwrap().len(), 9);
    assert_eq!(v["diverged"], false);
}

#[test]
fn figure3_writes_both_scenarios() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "figure3",
        "--out-dir",
        dir.path().to_str().unwrap(),
        "--trials",
        "500",
        "--seed",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v = json(&out);
    let runs = v.as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs[0]["exact_mean_sq_final"].as_f64().unwrap() < 0.04);
    assert!(runs[1]["exact_mean_sq_final"].as_f64().unwrap() > 4.0);
    for name in ["figure3_stabilizable.csv", "figure3_unstabilizable.csv"] {
        assert_eq!(
            std::fs::read_to_string(dir.path().join(name))
                .unwrap()
                .lines()
                .count(),
            62
        );
    }
}
