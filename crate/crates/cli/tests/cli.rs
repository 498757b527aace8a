use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pdichotomy"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn scenario_file(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("scenario.json");
    fs::write(&path, body).unwrap();
    path
}

fn run_scenario(dir: &Path, body: &str) -> (Output, Value) {
    let path = scenario_file(dir, body);
    let out = run(&["run", "--scenario", path.to_str().unwrap()], dir);
    let summary = fs::read_to_string(dir.join("out/summary.json"))
        .map(|s| serde_json::from_str(&s).unwrap())
        .unwrap_or(Value::Null);
    (out, summary)
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn examples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

#[test]
fn self_test_passes_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let a = run(&["self-test"], dir.path());
    let b = run(&["self-test"], dir.path());
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    assert!(stdout(&a).contains("0 failed"));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn corrupted_lyapunov_sign_names_the_failing_check() {
    let dir = TempDir::new().unwrap();
    let out = run(&["self-test", "--corrupt-lyapunov-sign"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stdout(&out)
        .lines()
        .any(|l| l.starts_with("FAIL") && l.contains("E negative semidefinite")));

    let out = run(&["solve-lyapunov", "--corrupt-lyapunov-sign"], dir.path());
    assert_eq!(code(&out), 1);
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    let nsd = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"].as_str().unwrap().contains("negative semidefinite"))
        .unwrap();
    assert_eq!(nsd["pass"], false);
}

#[test]
fn empty_scenario_writes_an_empty_summary() {
    let dir = TempDir::new().unwrap();
    let (out, summary) = run_scenario(dir.path(), r#"{"problem": "scalar-a0", "output_dir": "out", "tasks": []}"#);
    assert_eq!(code(&out), 0);
    assert_eq!(summary["tasks"].as_array().unwrap().len(), 0);
    assert_eq!(summary["pass"], true);
}

#[test]
fn missing_prerequisites_are_inserted_and_reported() {
    let dir = TempDir::new().unwrap();
    let (out, summary) = run_scenario(
        dir.path(),
        r#"{"problem": "scalar-a0", "output_dir": "out", "tasks": [{"task": "extremal"}]}"#,
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert_eq!(summary["inserted_dependencies"], serde_json::json!(["riccati", "lyapunov"]));
    let names: Vec<&str> = summary["tasks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| t["name"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["riccati", "lyapunov", "extremal"]);
    assert_eq!(summary["tasks"][0]["inserted"], true);
    assert!(dir.path().join("out/per_y.csv").is_file());
}

#[test]
fn dependency_cycles_are_configuration_errors() {
    let dir = TempDir::new().unwrap();
    let (out, _) = run_scenario(
        dir.path(),
        r#"{"problem": "scalar-a0", "output_dir": "out", "tasks": [
            {"task": "cauchy", "id": "a", "after": ["b"]},
            {"task": "avg-cost", "id": "b", "after": ["a"]}
        ]}"#,
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("cycle"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&run(&["solve-riccati", "--problem", "no-such-problem"], dir.path())), 2);
    assert_eq!(code(&run(&["finite-horizon", "--y0", "1,2,3"], dir.path())), 2);
    assert_eq!(code(&run(&["solve-lyapunov", "--method", "bogus"], dir.path())), 2);
    assert_eq!(code(&run(&["solve-riccati", "--grid", "3"], dir.path())), 2);
    let (out, _) = run_scenario(dir.path(), r#"{"problem": "paper-2d", "tasks": [{"task": "cauchy", "horizon": 3}]}"#);
    assert_eq!(code(&out), 2);
}

#[test]
fn numerical_failures_exit_with_three_and_name_the_task() {
    // The forward costate grows like e^{ν̂T}; far beyond a few periods the
    // direct Cauchy solve is refused as ill-conditioned.
    let dir = TempDir::new().unwrap();
    let out = run(&["cauchy", "--T", "200"], dir.path());
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("task 'cauchy'"));
}

#[test]
fn scalar_c3_decay_scenario_fits_rate_four() {
    let dir = TempDir::new().unwrap();
    let path = examples_dir().join("scalar_c3_decay.json");
    let out = run(&["run", "--scenario", path.to_str().unwrap(), "--out-dir", "."], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let fit = read_json(&dir.path().join("out/scalar_c3_decay/decay_fit.json"));
    let rate = fit["fit"]["rate"].as_f64().unwrap();
    assert!((rate - 4.0).abs() < 0.08, "rate {rate}");
    assert!(dir.path().join("out/scalar_c3_decay/decay_error.csv").is_file());
}

#[test]
fn paper_scenario_reproduces_the_reported_costs() {
    let dir = TempDir::new().unwrap();
    let path = examples_dir().join("paper_2d_turnpike.json");
    let out = run(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let d = read_json(&dir.path().join("out/paper_2d_turnpike/lq_diagnostics.json"));
    // Costs carry a factor 1/2; the reported values do not.
    let finite = 2.0 * d["cost"].as_f64().unwrap();
    let periodic = 2.0 * d["periodic_cost_over_horizon"].as_f64().unwrap();
    assert!((finite / 21.4649 - 1.0).abs() < 0.01, "{finite}");
    assert!((periodic / 21.6937 - 1.0).abs() < 0.01, "{periodic}");
    let summary = read_json(&dir.path().join("out/paper_2d_turnpike/summary.json"));
    assert_eq!(summary["inserted_dependencies"].as_array().unwrap().len(), 0);
}

#[test]
fn scenario_runs_are_byte_identical() {
    let body = r#"{"problem": "paper-2d", "output_dir": "out", "tasks": [
        {"task": "finite-horizon", "T": 12},
        {"task": "turnpike"},
        {"task": "riccati-decay"}
    ]}"#;
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    assert_eq!(code(&run_scenario(a.path(), body).0), 0);
    assert_eq!(code(&run_scenario(b.path(), body).0), 0);
    let mut csvs = 0;
    for entry in fs::read_dir(a.path().join("out")).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "csv") {
            let other = b.path().join("out").join(path.file_name().unwrap());
            assert_eq!(fs::read(&path).unwrap(), fs::read(&other).unwrap(), "{}", path.display());
            csvs += 1;
        }
    }
    assert!(csvs >= 8);
}

#[test]
fn solve_riccati_writes_csv_and_sidecar() {
    let dir = TempDir::new().unwrap();
    let out = run(&["solve-riccati", "--problem", "scalar-c3", "--seed-scale", "100", "--out-dir", "res"], dir.path());
    assert_eq!(code(&out), 0);
    let side = read_json(&dir.path().join("res/P.json"));
    for key in ["residual_sup", "periodicity_gap", "periods_to_converge", "nu_hat"] {
        assert!(!side[key].is_null(), "{key}");
    }
    assert!((side["nu_hat"].as_f64().unwrap() - 2.0).abs() < 1e-6);
    let csv = fs::read_to_string(dir.path().join("res/P.csv")).unwrap();
    assert!(csv.starts_with("t,X_11\n"));
    assert_eq!(csv.lines().count(), 2048 + 2);
}

#[test]
fn task_outputs_of_named_tasks_go_to_subdirectories() {
    let dir = TempDir::new().unwrap();
    let (out, summary) = run_scenario(
        dir.path(),
        r#"{"problem": "scalar-a0", "output_dir": "out", "tasks": [
            {"task": "finite-horizon", "id": "short", "T": 4},
            {"task": "finite-horizon", "id": "long", "T": 8, "method": "shooting"}
        ]}"#,
    );
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    assert!(dir.path().join("out/short/lq_y.csv").is_file());
    assert!(dir.path().join("out/long/lq_y.csv").is_file());
    assert_eq!(summary["tasks"].as_array().unwrap().len(), 5);
}

#[test]
fn custom_problem_file_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let path = examples_dir().join("forced_oscillator.json");
    let out = run(&["run", "--scenario", path.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0, "{}", stdout(&out));
    let summary = read_json(&dir.path().join("out/forced_oscillator/summary.json"));
    assert_eq!(summary["problem"], "forced-oscillator");
}
