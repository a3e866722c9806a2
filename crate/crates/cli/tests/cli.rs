use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const FIG1_BASE: &str =
    r#"{"clients":[{"p":0.8,"R":1,"theta":3},{"p":0.6,"R":1,"theta":3}],"K":1}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_interdelivery"))
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_gain_and_policy_table() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), FIG1_BASE);
    let out = dir.path().join("out");
    run_ok(&[
        "solve",
        "--scenario",
        path_str(&scenario),
        "--smax",
        "20",
        "--out",
        path_str(&out),
    ]);

    let summary = read_json(&out.join("solve.json"));
    assert_eq!(summary["states"], 21 * 21);
    assert!(summary["gain"].as_f64().unwrap().is_finite());
    let policy = fs::read_to_string(out.join("policy.csv")).unwrap();
    let mut lines = policy.lines();
    assert_eq!(lines.next(), Some("s_1,s_2,serve"));
    assert_eq!(lines.count(), 21 * 21);
}

#[test]
fn bounds_dominate_the_optimal_gain() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), FIG1_BASE);
    let out = path_str(dir.path());
    run_ok(&["solve", "--scenario", path_str(&scenario), "--out", out]);
    run_ok(&[
        "bounds",
        "--scenario",
        path_str(&scenario),
        "--resolution",
        "50",
        "--out",
        out,
    ]);

    let gain = read_json(&dir.path().join("solve.json"))["gain"]
        .as_f64()
        .unwrap();
    let bounds = read_json(&dir.path().join("bounds.json"));
    assert!(bounds["capacity_bound"].as_f64().unwrap() >= gain - 1e-6);
    assert!(bounds["lagrangian_bound"].as_f64().unwrap() >= gain - 1e-6);
    let curve = fs::read_to_string(dir.path().join("bounds_curve.csv")).unwrap();
    assert!(curve.starts_with("w,objective\n"));
}

#[test]
fn average_index_table_has_three_methods() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), FIG1_BASE);
    run_ok(&[
        "index",
        "--scenario",
        path_str(&scenario),
        "--nmax",
        "5",
        "--out",
        path_str(dir.path()),
    ]);

    let mut reader = csv::Reader::from_path(dir.path().join("index.csv")).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["client", "n", "W_paper", "W_renewal", "W_oracle"]);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 6);
    for r in &rows {
        let renewal: f64 = r[3].parse().unwrap();
        let oracle: f64 = r[4].parse().unwrap();
        assert!((renewal - oracle).abs() < 1e-6, "{r:?}");
    }
}

#[test]
fn discounted_mode_requires_beta() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), FIG1_BASE);
    let out = bin()
        .args(["index", "--scenario", path_str(&scenario), "--mode", "disc"])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--beta"));
}

#[test]
fn malformed_scenario_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        dir.path(),
        r#"{"clients":[{"p":0.8,"R":1,"theta":3},{"p":0.0,"R":1,"theta":3}],"K":1}"#,
    );
    let out = bin()
        .args([
            "solve",
            "--scenario",
            path_str(&scenario),
            "--out",
            path_str(dir.path()),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("clients[1].p"), "{stderr}");
    assert!(!dir.path().join("solve.json").exists());
}

#[test]
fn unknown_scenario_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(
        dir.path(),
        r#"{"clients":[{"p":0.8,"R":1,"theta":3}],"K":1,"k":2}"#,
    );
    let out = bin()
        .args([
            "solve",
            "--scenario",
            path_str(&scenario),
            "--out",
            path_str(dir.path()),
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown field"));
}

#[test]
fn simulate_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write_scenario(dir.path(), FIG1_BASE);
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_ok(&[
            "simulate",
            "--scenario",
            path_str(&scenario),
            "--policies",
            "index,round-robin,random-k",
            "--horizon",
            "5000",
            "--reps",
            "3",
            "--seed",
            "9",
            "--tie",
            "random",
            "--trace",
            "--out",
            path_str(&out),
        ]);
        outputs.push([
            fs::read(out.join("simulate.json")).unwrap(),
            fs::read(out.join("trace_random-k.csv")).unwrap(),
        ]);
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn sweep_spec_file_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        format!(
            r#"{{"name":"small","base":{FIG1_BASE},"vary":{{"client":1,"param":"theta"}},"values":[1,4],
               "policies":["optimal","index","max-elapsed"],"method":{{"kind":"both","horizon":2000,"reps":2}},
               "s_max":20,"seed":5}}"#
        ),
    )
    .unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        run_ok(&["sweep", "--spec", path_str(&spec), "--out", path_str(&out)]);
        outputs.push([
            fs::read(out.join("sweep.csv")).unwrap(),
            fs::read(out.join("summary.json")).unwrap(),
        ]);
    }
    assert_eq!(outputs[0], outputs[1]);
    let csv = String::from_utf8(outputs[0][0].clone()).unwrap();
    assert!(csv.starts_with(
        "sweep_param,sweep_value,policy,gain_exact,gain_sim,gain_sim_stderr,gap_rel,capacity_bound,lagrangian_bound\n"
    ));
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn sweep_without_spec_or_preset_fails() {
    let out = bin().arg("sweep").output().unwrap();
    assert!(!out.status.success());
}
