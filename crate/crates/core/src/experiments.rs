//! End-to-end runs behind the command-line tool: synthesis, verification,
//! simulation and the `(T, d̄)` solvability sweep.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig};
use crate::plant::PlantModel;
use crate::protocol::{DropoutPlan, SchedulingMode};
use crate::sim::{intersample_bound, simulate, SimError, SimulationSetup, SimulationTrace};
use crate::synth::{
    build_script_matrices, synthesize, ArtifactError, BarrierSolver, Certificate, GainSchedule,
    SolverOptions, SynthError, SynthesisProblem, Synthesis, Verdict, VerificationReport,
    verify_certificate,
};

pub const GAINS_FILE: &str = "gains.json";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "verification.json";
pub const PLAN_FILE: &str = "dropouts.json";
pub const GRID_FILE: &str = "solvability.csv";

/// Process exit statuses of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitStatus {
    Success,
    Infeasible,
    VerificationFailed,
    ConfigError,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Infeasible => 2,
            ExitStatus::VerificationFailed => 3,
            ExitStatus::ConfigError => 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Artifact {
        path: PathBuf,
        source: ArtifactError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl ExperimentError {
    pub fn status(&self) -> ExitStatus {
        match self {
            ExperimentError::Config(_) | ExperimentError::Artifact { .. } => ExitStatus::ConfigError,
            ExperimentError::Synth(SynthError::IllConditioned { .. }) => ExitStatus::Infeasible,
            _ => ExitStatus::ConfigError,
        }
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), ExperimentError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_gains(path: &Path) -> Result<GainSchedule, ExperimentError> {
    GainSchedule::from_json(&read_file(path)?).map_err(|source| ExperimentError::Artifact {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_certificate(path: &Path) -> Result<Certificate, ExperimentError> {
    Certificate::from_json(&read_file(path)?).map_err(|source| ExperimentError::Artifact {
        path: path.to_path_buf(),
        source,
    })
}

fn solver_for(config: &ExperimentConfig) -> BarrierSolver {
    BarrierSolver::new(SolverOptions {
        margin: config.margin(),
        ..SolverOptions::default()
    })
}

/// Result of trying each λ of the grid in order until one is feasible.
#[derive(Debug, Clone)]
pub struct SynthRun {
    pub problem: SynthesisProblem,
    pub synthesis: Option<Synthesis>,
    /// One `(λ, verdict code)` per attempt.
    pub attempts: Vec<(f64, char)>,
}

impl SynthRun {
    pub fn feasible(&self) -> Option<(&Certificate, &GainSchedule)> {
        let s = self.synthesis.as_ref()?;
        Some((s.certificate.as_ref()?, s.gains.as_ref()?))
    }

    pub fn verdict_code(&self) -> char {
        if self.feasible().is_some() {
            'F'
        } else if !self.attempts.is_empty() && self.attempts.iter().all(|a| a.1 == 'I') {
            'I'
        } else {
            'U'
        }
    }
}

fn synthesize_problem(
    base: &SynthesisProblem,
    lambdas: &[f64],
    solver: &BarrierSolver,
) -> SynthRun {
    let mut attempts = Vec::new();
    let mut last = None;
    for &lambda in lambdas {
        let problem = base.with_lambda(lambda);
        match synthesize(&problem, solver) {
            Ok(s) => {
                let code = if s.gains.is_some() { 'F' } else { s.outcome.verdict.code() };
                attempts.push((lambda, code));
                if code == 'F' {
                    return SynthRun {
                        problem,
                        synthesis: Some(s),
                        attempts,
                    };
                }
                last = Some((problem, s));
            }
            // gain recovery refused an ill-conditioned certificate
            Err(_) => attempts.push((lambda, 'U')),
        }
    }
    let (problem, synthesis) = match last {
        Some((p, s)) => (p, Some(s)),
        None => (base.clone(), None),
    };
    SynthRun {
        problem,
        synthesis,
        attempts,
    }
}

/// Synthesizes gains for the configured instance.
pub fn synthesize_config(config: &ExperimentConfig) -> SynthRun {
    synthesize_problem(&config.problem(), &config.lambdas(), &solver_for(config))
}

/// Re-checks stored artifacts against the configured plant.
pub fn verify_artifacts(
    config: &ExperimentConfig,
    certificate: &Certificate,
    gains: &GainSchedule,
) -> Result<VerificationReport, ExperimentError> {
    let problem = SynthesisProblem::new(
        config.plant(),
        certificate.period,
        certificate.depth().saturating_sub(1),
        certificate.lambda,
        certificate.mode,
    )?;
    let scripts = build_script_matrices(&problem.plant, problem.period, problem.max_dropouts)?;
    Ok(verify_certificate(certificate, &scripts, gains, &problem)?)
}

/// Simulates the configured run with the given gains.
pub fn simulate_config(
    config: &ExperimentConfig,
    gains: &GainSchedule,
    plan: &DropoutPlan,
) -> Result<SimulationTrace, ExperimentError> {
    let plant = config.plant();
    let (x0, x_hat0) = config.initial_states();
    let setup = SimulationSetup {
        x0,
        x_hat0,
        substeps: config.substeps(),
        input: config.input_signal(),
        ..SimulationSetup::new(&plant, gains, gains.mode, config.sampling_period, plan, config.horizon)
    };
    Ok(simulate(&setup)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub status: ExitStatus,
    pub verdict: char,
    pub lambda_attempts: Vec<(f64, char)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intersample_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_error_norm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_error_norm: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub summary: PipelineSummary,
    pub out_dir: PathBuf,
    pub trace: Option<SimulationTrace>,
    pub certificate: Option<Certificate>,
    pub gains: Option<GainSchedule>,
}

impl PipelineOutcome {
    pub fn status(&self) -> ExitStatus {
        self.summary.status
    }
}

/// Synthesize, verify, simulate and write every artifact to `out_dir`.
pub fn run_pipeline(
    config: &ExperimentConfig,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<PipelineOutcome, ExperimentError> {
    let run = synthesize_config(config);
    let mut summary = PipelineSummary {
        status: ExitStatus::Infeasible,
        verdict: run.verdict_code(),
        lambda_attempts: run.attempts.clone(),
        lambda: None,
        verification: None,
        intersample_bound: None,
        initial_error_norm: None,
        final_error_norm: None,
    };
    let report_path = out_dir.join(REPORT_FILE);
    let Some((certificate, gains)) = run.feasible() else {
        write_file(&report_path, &summary_json(&summary))?;
        return Ok(PipelineOutcome {
            summary,
            out_dir: out_dir.to_path_buf(),
            trace: None,
            certificate: None,
            gains: None,
        });
    };
    summary.lambda = Some(run.problem.lambda);
    write_file(&out_dir.join(CERTIFICATE_FILE), &certificate.to_json())?;
    write_file(&out_dir.join(GAINS_FILE), &gains.to_json())?;

    let scripts = &run.synthesis.as_ref().expect("feasible run").scripts;
    let report = verify_certificate(certificate, scripts, gains, &run.problem)?;
    let passed = report.passed;
    summary.verification = Some(report);
    if !passed {
        summary.status = ExitStatus::VerificationFailed;
        write_file(&report_path, &summary_json(&summary))?;
        return Ok(PipelineOutcome {
            summary,
            out_dir: out_dir.to_path_buf(),
            trace: None,
            certificate: Some(certificate.clone()),
            gains: Some(gains.clone()),
        });
    }

    let plan = config.dropout_plan(seed);
    write_file(&out_dir.join(PLAN_FILE), &plan.to_json())?;
    let trace = simulate_config(config, gains, &plan)?;
    write_file(&out_dir.join(TRACE_FILE), &trace.to_csv())?;
    summary.intersample_bound = Some(intersample_bound(
        &run.problem.plant,
        gains,
        config.mode,
        config.max_dropouts,
        config.sampling_period,
    )?);
    let norms = trace.error_norms();
    summary.initial_error_norm = norms.first().copied();
    summary.final_error_norm = norms.last().copied();
    summary.status = ExitStatus::Success;
    write_file(&report_path, &summary_json(&summary))?;
    Ok(PipelineOutcome {
        summary,
        out_dir: out_dir.to_path_buf(),
        trace: Some(trace),
        certificate: Some(certificate.clone()),
        gains: Some(gains.clone()),
    })
}

fn summary_json(summary: &PipelineSummary) -> String {
    serde_json::to_string_pretty(summary).expect("summary serializes")
}

/// Verdicts over a `(d̄, T)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolvabilityGrid {
    pub periods: Vec<f64>,
    pub max_dropouts: Vec<usize>,
    /// `verdicts[row][col]` for `max_dropouts[row]`, `periods[col]`;
    /// `F`, `I` or `U`.
    pub verdicts: Vec<Vec<char>>,
}

impl SolvabilityGrid {
    /// Header `d_bar,T1,T2,...`; one row per `d̄`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("d_bar");
        for t in &self.periods {
            write!(out, ",{t}").unwrap();
        }
        out.push('\n');
        for (dbar, row) in self.max_dropouts.iter().zip(&self.verdicts) {
            write!(out, "{dbar}").unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Largest period marked feasible in row `row`.
    pub fn max_feasible_period(&self, row: usize) -> Option<f64> {
        self.periods
            .iter()
            .zip(&self.verdicts[row])
            .filter(|(_, &v)| v == 'F')
            .map(|(&t, _)| t)
            .reduce(f64::max)
    }
}

/// One independent solve per grid point, distributed over the rayon pool.
/// A point is `F` once some λ yields gains passing verification.
pub fn sweep_solvability(
    plant: &PlantModel,
    mode: SchedulingMode,
    periods: &[f64],
    max_dropouts: &[usize],
    lambdas: &[f64],
    options: &SolverOptions,
) -> SolvabilityGrid {
    let solver = BarrierSolver::new(options.clone());
    let points: Vec<(usize, usize)> = (0..max_dropouts.len())
        .flat_map(|r| (0..periods.len()).map(move |c| (r, c)))
        .collect();
    let codes: Vec<char> = points
        .par_iter()
        .map(|&(r, c)| solve_point(plant, mode, periods[c], max_dropouts[r], lambdas, &solver))
        .collect();
    let verdicts = codes.chunks(periods.len().max(1)).map(<[char]>::to_vec).collect();
    SolvabilityGrid {
        periods: periods.to_vec(),
        max_dropouts: max_dropouts.to_vec(),
        verdicts,
    }
}

fn solve_point(
    plant: &PlantModel,
    mode: SchedulingMode,
    period: f64,
    max_dropouts: usize,
    lambdas: &[f64],
    solver: &BarrierSolver,
) -> char {
    let Some(&first) = lambdas.first() else {
        return 'U';
    };
    let Ok(base) = SynthesisProblem::new(plant.clone(), period, max_dropouts, first, mode) else {
        return 'U';
    };
    let run = synthesize_problem(&base, lambdas, solver);
    match run.feasible() {
        Some((cert, gains)) => {
            let scripts = &run.synthesis.as_ref().expect("feasible run").scripts;
            match verify_certificate(cert, scripts, gains, &run.problem) {
                Ok(r) if r.passed => 'F',
                _ => 'U',
            }
        }
        None => run.verdict_code(),
    }
}

/// Sweep over the config's grids, falling back to its own `T` and `d̄`.
pub fn sweep_config(config: &ExperimentConfig) -> SolvabilityGrid {
    let (periods, dbars) = match &config.sweep {
        Some(s) => (s.periods.clone(), s.max_dropouts.clone()),
        None => (vec![config.sampling_period], vec![config.max_dropouts]),
    };
    sweep_solvability(
        &config.plant(),
        config.mode,
        &periods,
        &dbars,
        &config.lambdas(),
        &solver_for(config).options,
    )
}

/// `Verdict` of the last attempt, for reporting.
pub fn last_verdict(run: &SynthRun) -> Option<&Verdict> {
    run.synthesis.as_ref().map(|s| &s.outcome.verdict)
}
