mod common;

use std::process::Command;

use common::*;
use rr_observer::config::ExperimentConfig;
use rr_observer::experiments::{
    load_certificate, load_gains, run_pipeline, sweep_solvability, verify_artifacts, ExitStatus,
    CERTIFICATE_FILE, GAINS_FILE, PLAN_FILE, REPORT_FILE, TRACE_FILE,
};
use rr_observer::sim::intersample_bound;
use rr_observer::synth::SolverOptions;
use rr_observer::{DropoutPlan, SchedulingMode};

fn short_config() -> ExperimentConfig {
    let mut config = reference_config();
    config.horizon = 2.0;
    config
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rr-observer"))
}

#[test]
fn reference_pipeline_succeeds_and_decays() {
    let dir = tempfile::tempdir().unwrap();
    let config = reference_config();
    let outcome = run_pipeline(&config, None, dir.path()).unwrap();
    assert_eq!(outcome.status(), ExitStatus::Success);
    let summary = &outcome.summary;
    assert_eq!(summary.verdict, 'F');
    assert!(summary.verification.as_ref().unwrap().passed);
    assert!(summary.final_error_norm.unwrap() < 1e-3 * summary.initial_error_norm.unwrap());
    for file in [GAINS_FILE, CERTIFICATE_FILE, TRACE_FILE, REPORT_FILE, PLAN_FILE] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
    let trace = outcome.trace.unwrap();
    let alpha = summary.intersample_bound.unwrap();
    assert!(trace.max_intersample_ratio() <= alpha * (1.0 + 1e-6));
    // unstable plant: the state itself grows while the error vanishes
    let x_end = trace.rows.last().unwrap().x.norm();
    assert!(x_end > trace.rows[0].x.norm());
}

#[test]
fn identical_config_and_seed_give_identical_artifacts() {
    let config = short_config();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_pipeline(&config, Some(9), a.path()).unwrap();
    run_pipeline(&config, Some(9), b.path()).unwrap();
    for file in [TRACE_FILE, GAINS_FILE, CERTIFICATE_FILE, PLAN_FILE] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
    let c = tempfile::tempdir().unwrap();
    run_pipeline(&config, Some(10), c.path()).unwrap();
    assert_ne!(
        std::fs::read(a.path().join(TRACE_FILE)).unwrap(),
        std::fs::read(c.path().join(TRACE_FILE)).unwrap()
    );
}

#[test]
fn emitted_gains_reload_and_reverify() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config();
    let outcome = run_pipeline(&config, None, dir.path()).unwrap();
    let gains = load_gains(&dir.path().join(GAINS_FILE)).unwrap();
    let cert = load_certificate(&dir.path().join(CERTIFICATE_FILE)).unwrap();
    assert_eq!(&gains, outcome.gains.as_ref().unwrap());
    assert_eq!(&cert, outcome.certificate.as_ref().unwrap());
    let report = verify_artifacts(&config, &cert, &gains).unwrap();
    assert!(report.passed);
    assert_eq!(report.decrease_checks, 50);
    let plan = DropoutPlan::from_json(&std::fs::read_to_string(dir.path().join(PLAN_FILE)).unwrap()).unwrap();
    assert_eq!(plan.counts, config.dropout_plan(None).counts);
}

#[test]
fn long_period_is_not_certified() {
    // regression fixture: the solver proves infeasibility here
    let dir = tempfile::tempdir().unwrap();
    let mut config = reference_config();
    config.sampling_period = 1.0;
    let outcome = run_pipeline(&config, None, dir.path()).unwrap();
    assert_eq!(outcome.status(), ExitStatus::Infeasible);
    assert_eq!(outcome.summary.verdict, 'I');
    assert!(!dir.path().join(GAINS_FILE).exists());
    assert!(dir.path().join(REPORT_FILE).exists());
}

#[test]
fn matching_initial_states_give_zero_error_column() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = short_config();
    config.xhat0 = config.x0.clone();
    run_pipeline(&config, None, dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(
        header,
        ["t", "x1", "x2", "x3", "x4", "xhat1", "xhat2", "xhat3", "xhat4", "eps_norm", "pi", "sigma"]
    );
    let mut rows = 0;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[9].parse::<f64>().unwrap(), 0.0);
        rows += 1;
    }
    // 100 periods of 10 rows plus the final instant
    assert_eq!(rows, 1001);
}

#[test]
fn trace_rows_carry_exact_error_and_counters() {
    let dir = tempfile::tempdir().unwrap();
    let config = short_config();
    run_pipeline(&config, Some(3), dir.path()).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(TRACE_FILE)).unwrap();
    for line in csv.lines().skip(1) {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let eps: f64 = (0..4).map(|j| (cells[1 + j] - cells[5 + j]).powi(2)).sum::<f64>().sqrt();
        assert!((eps - cells[9]).abs() <= 1e-15 * eps.max(1.0));
        assert!((1.0..=2.0).contains(&cells[10]));
        assert!((0.0..=4.0).contains(&cells[11]));
    }
}

#[test]
fn sweep_is_deterministic_and_order_free() {
    let plant = reference_plant();
    let opts = SolverOptions::default();
    let grid = sweep_solvability(&plant, SchedulingMode::RoundRobin, &[0.02, 0.3], &[0, 4], &[20.0], &opts);
    let again = sweep_solvability(&plant, SchedulingMode::RoundRobin, &[0.02, 0.3], &[0, 4], &[20.0], &opts);
    assert_eq!(grid.to_csv(), again.to_csv());
    let flipped = sweep_solvability(&plant, SchedulingMode::RoundRobin, &[0.3, 0.02], &[4, 0], &[20.0], &opts);
    for r in 0..2 {
        for c in 0..2 {
            assert_eq!(grid.verdicts[r][c], flipped.verdicts[1 - r][1 - c]);
        }
    }
    assert_eq!(grid.verdicts[1][0], 'F');
    assert_eq!(grid.verdicts[1][1], 'I');
}

#[test]
fn single_point_and_zero_dropout_column() {
    let plant = reference_plant();
    let opts = SolverOptions::default();
    let grid = sweep_solvability(&plant, SchedulingMode::RoundRobin, &[0.02], &[4], &[20.0], &opts);
    assert_eq!(grid.to_csv(), "d_bar,0.02\n4,F\n");
    // (A, C) is observable
    let obs = rr_observer::linalg::vstack(&[
        plant.c(),
        &(plant.c() * plant.a()),
        &(plant.c() * plant.a() * plant.a()),
        &(plant.c() * plant.a() * plant.a() * plant.a()),
    ]);
    assert_eq!(obs.rank(1e-10), 4);
    let column = sweep_solvability(&plant, SchedulingMode::RoundRobin, &[0.01, 0.05], &[0], &[20.0], &opts);
    assert_eq!(column.verdicts, vec![vec!['F', 'F']]);
}

#[test]
fn lambda_grid_falls_through_to_a_feasible_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = short_config();
    config.lambda = rr_observer::config::LambdaSpec::Grid(vec![0.01, 20.0]);
    let outcome = run_pipeline(&config, None, dir.path()).unwrap();
    assert_eq!(outcome.status(), ExitStatus::Success);
    assert_eq!(outcome.summary.lambda, Some(20.0));
    assert_eq!(outcome.summary.lambda_attempts.len(), 2);
    assert_ne!(outcome.summary.lambda_attempts[0].1, 'F');
}

#[test]
fn concentrated_mode_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = short_config();
    config.mode = SchedulingMode::Concentrated;
    let outcome = run_pipeline(&config, None, dir.path()).unwrap();
    assert_eq!(outcome.status(), ExitStatus::Success);
    let gains = outcome.gains.unwrap();
    assert_eq!(gains.groups(), 1);
    assert_eq!(gains.gain(0, 0).shape(), (4, 2));
    let trace = outcome.trace.unwrap();
    assert!(trace.rows.iter().all(|r| r.pi == 1));
    let alpha = intersample_bound(&config.plant(), &gains, config.mode, 4, 0.02).unwrap();
    assert!(trace.max_intersample_ratio() <= alpha * (1.0 + 1e-6));
}

fn write_config(dir: &std::path::Path, config: &ExperimentConfig) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json()).unwrap();
    path
}

#[test]
fn cli_subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(dir.path(), &short_config());
    let run = |sub: &str| {
        bin()
            .args([sub, "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--seed", "5"])
            .output()
            .unwrap()
    };
    assert_eq!(run("synth").status.code(), Some(0));
    assert!(out.join(GAINS_FILE).exists());
    let verify = run("verify");
    assert_eq!(verify.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&verify.stdout).contains("passed=true"));
    assert_eq!(run("simulate").status.code(), Some(0));
    let simulated = std::fs::read(out.join(TRACE_FILE)).unwrap();
    assert_eq!(run("pipeline").status.code(), Some(0));
    assert_eq!(std::fs::read(out.join(TRACE_FILE)).unwrap(), simulated);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = short_config();
    config.sampling_period = 1.0;
    let cfg = write_config(dir.path(), &config);
    let status = bin()
        .args(["pipeline", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    let mut value: serde_json::Value = serde_json::from_str(&short_config().to_json()).unwrap();
    value["x0"] = serde_json::json!([1, 2]);
    std::fs::write(&bad, value.to_string()).unwrap();
    let output = bin().args(["pipeline", "--config", bad.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&output.stderr).contains("x0"));

    // tampered gains no longer verify
    let good = write_config(dir.path(), &short_config());
    let args = ["--config", good.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    assert_eq!(bin().arg("synth").args(args).status().unwrap().code(), Some(0));
    let mut gains = load_gains(&out.join(GAINS_FILE)).unwrap();
    gains.gains[0][0] *= 0.0;
    std::fs::write(out.join(GAINS_FILE), gains.to_json()).unwrap();
    assert_eq!(bin().arg("verify").args(args).status().unwrap().code(), Some(3));
}

#[test]
fn cli_lambda_grid_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let mut config = short_config();
    config.sweep = Some(rr_observer::config::SweepSpec {
        periods: vec![0.02, 1.0],
        max_dropouts: vec![1],
    });
    let cfg = write_config(dir.path(), &config);
    let output = bin()
        .args(["sweep", "--config", cfg.to_str().unwrap(), "--out-dir", out.to_str().unwrap(), "--lambda-grid", "5,20"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0));
    let grid = std::fs::read_to_string(out.join("solvability.csv")).unwrap();
    assert_eq!(grid.lines().next(), Some("d_bar,0.02,1"));
    assert!(grid.lines().nth(1).unwrap().starts_with("1,F,"));
}

#[test]
fn config_errors_name_the_field() {
    let text = short_config().to_json();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value["plant"]["c"]["cols"] = 5.into();
    value["plant"]["c"]["data"] = serde_json::json!([1, 0, 0, 0, 0, 0, 1, 0, 0, 0]);
    let err = ExperimentConfig::from_json(&value.to_string()).unwrap_err();
    assert_eq!(err.field_path(), Some("plant.c"));
    value = serde_json::from_str(&text).unwrap();
    value["sampling_period"] = "fast".into();
    let err = ExperimentConfig::from_json(&value.to_string()).unwrap_err();
    assert_eq!(err.field_path(), Some("sampling_period"));
}
