use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scmpc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn table(o: &Output) -> Vec<(usize, usize)> {
    stdout(o)
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, value: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string(value).unwrap()).unwrap();
    p
}

fn benchmark_value() -> Value {
    serde_json::from_str(&std::fs::read_to_string(config("benchmark.json")).unwrap()).unwrap()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn complexity_table() {
    let o = scmpc(&["complexity", "--rho1", "2", "--eps", "0.1", "--removals", "0,50,100,500"]);
    assert!(o.status.success());
    let rows = table(&o);
    assert_eq!(rows[0], (0, 19));
    for (row, want) in rows[1..].iter().zip([702usize, 1295, 5723]) {
        assert!(row.1.abs_diff(want) <= 2, "{row:?} vs {want}");
    }
    let o = scmpc(&["complexity", "--rho1", "1", "--eps", "0.05", "--removals", "0"]);
    assert_eq!(table(&o), vec![(0, 19)]);
    let o = scmpc(&["complexity", "--rho1", "1", "--eps", "0.1"]);
    assert_eq!(table(&o), vec![(0, 9)]);
}

#[test]
fn invalid_epsilon_exits_2() {
    let o = scmpc(&["complexity", "--rho1", "2", "--eps", "0.7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("eps"));
    assert_eq!(scmpc(&["complexity", "--rho1", "2"]).status.code(), Some(2));
}

#[test]
fn sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sweep.csv");
    let o = scmpc(&[
        "complexity", "--rho1", "2", "--eps", "0.1", "--removals", "0,5", "--sweep", "30",
        "--output", p.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("removals,samples,bound"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    // K from R + 2 to 30 for each R
    assert_eq!(rows.len(), 29 + 24);
    let at19 = rows.iter().find(|r| r[0] == 0.0 && r[1] == 19.0).unwrap();
    assert!((at19[2] - 0.1).abs() < 1e-9);
}

#[test]
fn single_step_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = scmpc(&[
        "simulate", config("benchmark.json").to_str().unwrap(), "--steps", "1", "--output", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,x1,x2,u1,u2,violation1,stage_cost,solver_status");
    assert_eq!(lines.len(), 2);
    let stats = read_json(&out.join("stats.json"));
    assert_eq!(stats["completed_steps"], 1);
    assert_eq!(stats["constraints"][0]["samples"], 19);
}

#[test]
fn benchmark_violation_rate() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = scmpc(&["simulate", config("benchmark.json").to_str().unwrap(), "--output", out.to_str().unwrap()]);
    assert!(o.status.success());
    let stats = read_json(&out.join("stats.json"));
    let v = stats["constraints"][0]["violation_rate"].as_f64().unwrap();
    assert!((0.08..=0.12).contains(&v), "{v}");
    let csv = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_001);
    for line in csv.lines().skip(1) {
        let flag = line.split(',').nth(5).unwrap();
        assert!(flag == "0" || flag == "1");
    }
}

#[test]
fn reruns_are_identical_apart_from_wall_time() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = scmpc(&[
            "simulate", config("individual.json").to_str().unwrap(), "--steps", "200", "--seed-controller", "7",
            "--seed-plant", "8", "--output", out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        let mut stats = read_json(&out.join("stats.json"));
        stats.as_object_mut().unwrap().remove("wall_time_s");
        (stats, std::fs::read(out.join("trajectory.csv")).unwrap())
    };
    let (a, ta) = run("a");
    let (b, tb) = run("b");
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(a["seeds"]["controller"], 7);
    assert_eq!(a["constraints"][1]["samples"], 9);
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = benchmark_value();
    v["horizn"] = 4.into();
    let p = write_config(dir.path(), &v);
    let o = scmpc(&["simulate", p.to_str().unwrap(), "--steps", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));
}

#[test]
fn inadmissible_pair_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = benchmark_value();
    v["constraints"][0]["samples"] = 10.into();
    let p = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let args = ["simulate", p.to_str().unwrap(), "--steps", "3", "--output", out.to_str().unwrap()];
    assert_eq!(scmpc(&args).status.code(), Some(2));
    let mut forced = args.to_vec();
    forced.push("--force");
    assert!(scmpc(&forced).status.success());
    assert_eq!(read_json(&out.join("stats.json"))["constraints"][0]["admissible"], false);
}

#[test]
fn hard_infeasibility_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut v = benchmark_value();
    v["constraints"][0]["offsets"] = serde_json::json!([-50.0, -50.0]);
    v["slack_penalty"] = 0.0.into();
    let p = write_config(dir.path(), &v);
    let out = dir.path().join("out");
    let o = scmpc(&["simulate", p.to_str().unwrap(), "--steps", "5", "--output", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step 0"));
    assert_eq!(read_json(&out.join("stats.json"))["failed_at"], 0);
}

#[test]
fn replications_write_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = scmpc(&[
        "simulate", config("benchmark.json").to_str().unwrap(), "--steps", "50", "--replications", "3", "--output",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success());
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["replications"], 3);
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs[2]["seeds"]["plant"], 4);
    assert!(out.join("rep1").join("trajectory.csv").exists());
    let mean: f64 = runs.iter().map(|r| r["cost_mean"].as_f64().unwrap()).sum::<f64>() / 3.0;
    assert!((summary["cost_mean"].as_f64().unwrap() - mean).abs() < 1e-12);
}

#[test]
fn validate_bound_reports_json() {
    let o = scmpc(&["validate-bound", "--samples", "9", "--draws", "400", "--seed", "3"]);
    assert!(o.status.success());
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((v["bound"].as_f64().unwrap() - 0.1).abs() < 1e-9);
    assert_eq!(v["within_bound"], true);
}

#[test]
fn log_level_from_environment() {
    let o = Command::new(env!("CARGO_BIN_EXE_scmpc"))
        .args(["validate-bound", "--samples", "9", "--draws", "10"])
        .env("SCMPC_LOG", "info")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("bound validation"));
}
