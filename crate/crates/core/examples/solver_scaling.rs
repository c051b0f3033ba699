//! Times synthesis on random plants of growing size.
//!
//! ```text
//! cargo run --release --example solver_scaling -- 10 4 8
//! ```

use std::time::Instant;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rr_observer::synth::{synthesize, verify_certificate, BarrierSolver, SynthesisProblem};
use rr_observer::{Matrix, PlantModel, SchedulingMode};

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let (n, p, dbar) = match args[..] {
        [n, p, d] => (n, p, d),
        _ => (6, 3, 4),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut uniform = move || (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0;
    let a = Matrix::from_fn(n, n, |_, _| uniform() / (n as f64).sqrt());
    let c = Matrix::from_fn(p, n, |_, _| uniform());
    let plant = PlantModel::new(a, None, c).unwrap();
    let problem = SynthesisProblem::new(plant, 0.02, dbar, 20.0, SchedulingMode::RoundRobin).unwrap();
    let start = Instant::now();
    let s = synthesize(&problem, &BarrierSolver::default()).unwrap();
    println!(
        "n={n} p={p} d_bar={dbar}: verdict {} after {} Newton steps in {:.1} s",
        s.outcome.verdict.code(),
        s.outcome.newton_steps,
        start.elapsed().as_secs_f64()
    );
    if let (Some(cert), Some(gains)) = (&s.certificate, &s.gains) {
        let report = verify_certificate(cert, &s.scripts, gains, &problem).unwrap();
        println!("verification passed={} worst_lambda_max={:e}", report.passed, report.worst_lambda_max);
    }
}
