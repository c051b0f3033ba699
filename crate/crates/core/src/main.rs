use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rr_observer::config::{ExperimentConfig, LambdaSpec};
use rr_observer::experiments::{
    load_certificate, load_gains, run_pipeline, simulate_config, sweep_config, synthesize_config,
    verify_artifacts, write_file, ExitStatus, ExperimentError, CERTIFICATE_FILE, GAINS_FILE,
    GRID_FILE, PLAN_FILE, REPORT_FILE, TRACE_FILE,
};

#[derive(Parser)]
#[command(name = "rr-observer", version, about = "Observer synthesis and simulation over a lossy round-robin network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the dropout plan with a seeded uniform one.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Comma-separated λ values tried in order; overrides `lambda`.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the LMIs and write gains and certificate.
    Synth(Common),
    /// Re-verify stored gains and certificate.
    Verify(Common),
    /// Simulate with stored gains and write the trace.
    Simulate(Common),
    /// Solvability sweep over the config's (T, d̄) grid.
    Sweep(Common),
    /// Synthesize, verify and simulate in one go.
    Pipeline(Common),
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), ExperimentError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(grid) = &common.lambda_grid {
        config.lambda = LambdaSpec::Grid(grid.clone());
        config.validate()?;
    }
    let out = common.out_dir.clone().unwrap_or_else(|| config.output_dir.clone());
    Ok((config, out))
}

fn run(command: Command) -> Result<ExitStatus, ExperimentError> {
    match command {
        Command::Pipeline(common) => {
            let (config, out) = load(&common)?;
            let outcome = run_pipeline(&config, common.seed, &out)?;
            let s = &outcome.summary;
            println!("verdict {} ({})", s.verdict, describe_attempts(&s.lambda_attempts));
            if let Some(r) = &s.verification {
                println!("verification passed={} worst_lambda_max={:e}", r.passed, r.worst_lambda_max);
            }
            if let (Some(e0), Some(e1)) = (s.initial_error_norm, s.final_error_norm) {
                println!("error norm {e0:e} -> {e1:e}");
            }
            println!("artifacts in {}", out.display());
            Ok(s.status)
        }
        Command::Synth(common) => {
            let (config, out) = load(&common)?;
            let run = synthesize_config(&config);
            println!("verdict {} ({})", run.verdict_code(), describe_attempts(&run.attempts));
            match run.feasible() {
                Some((cert, gains)) => {
                    write_file(&out.join(CERTIFICATE_FILE), &cert.to_json())?;
                    write_file(&out.join(GAINS_FILE), &gains.to_json())?;
                    Ok(ExitStatus::Success)
                }
                None => Ok(ExitStatus::Infeasible),
            }
        }
        Command::Verify(common) => {
            let (config, out) = load(&common)?;
            let cert = load_certificate(&out.join(CERTIFICATE_FILE))?;
            let gains = load_gains(&out.join(GAINS_FILE))?;
            let report = verify_artifacts(&config, &cert, &gains)?;
            write_file(&out.join(REPORT_FILE), &report.to_json())?;
            println!("verification passed={} worst_lambda_max={:e}", report.passed, report.worst_lambda_max);
            Ok(if report.passed {
                ExitStatus::Success
            } else {
                ExitStatus::VerificationFailed
            })
        }
        Command::Simulate(common) => {
            let (config, out) = load(&common)?;
            let gains = load_gains(&out.join(GAINS_FILE))?;
            let plan = config.dropout_plan(common.seed);
            let trace = simulate_config(&config, &gains, &plan)?;
            write_file(&out.join(PLAN_FILE), &plan.to_json())?;
            write_file(&out.join(TRACE_FILE), &trace.to_csv())?;
            report_trace(&out.join(TRACE_FILE), &trace.error_norms());
            Ok(ExitStatus::Success)
        }
        Command::Sweep(common) => {
            let (config, out) = load(&common)?;
            let grid = sweep_config(&config);
            let path = out.join(GRID_FILE);
            write_file(&path, &grid.to_csv())?;
            print!("{}", grid.to_csv());
            println!("grid written to {}", path.display());
            Ok(ExitStatus::Success)
        }
    }
}

fn describe_attempts(attempts: &[(f64, char)]) -> String {
    attempts
        .iter()
        .map(|(l, c)| format!("lambda={l}:{c}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn report_trace(path: &Path, norms: &[f64]) {
    if let (Some(first), Some(last)) = (norms.first(), norms.last()) {
        println!("error norm {first:e} -> {last:e}");
    }
    println!("trace written to {}", path.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match run(cli.command) {
        Ok(status) => status,
        Err(err) => {
            eprintln!("error: {err}");
            err.status()
        }
    };
    ExitCode::from(status.code() as u8)
}
