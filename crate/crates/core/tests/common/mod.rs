#![allow(dead_code)]

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rr_observer::config::ExperimentConfig;
use rr_observer::linalg::{exp_integral, from_rows, mat_exp};
use rr_observer::synth::GainSchedule;
use rr_observer::{DropoutPlan, Matrix, PlantModel, SchedulingMode, Vector};

pub const REFERENCE_A: [f64; 16] = [
    0.05, -0.59, 1.04, 2.14, 0.57, -0.26, -0.26, -0.62, -1.05, 1.36, -0.62, 1.51, -1.48, -1.01,
    -0.35, 0.09,
];

pub fn reference_plant() -> PlantModel {
    let c = from_rows(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    PlantModel::new(from_rows(4, 4, &REFERENCE_A), None, c).unwrap()
}

pub fn fixture_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/four_state.json")
}

pub fn reference_config() -> ExperimentConfig {
    ExperimentConfig::load(&fixture_path()).unwrap()
}

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed))
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.0.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    /// Uniform on `lo..=hi`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.0.next_u64() % (hi - lo + 1) as u64) as usize
    }

    pub fn matrix(&mut self, r: usize, c: usize, scale: f64) -> Matrix {
        Matrix::from_fn(r, c, |_, _| self.uniform(-scale, scale))
    }
}

/// Random round-robin instance: plant, gains, period, plan.
pub struct Instance {
    pub plant: PlantModel,
    pub gains: GainSchedule,
    pub period: f64,
    pub max_dropouts: usize,
    pub plan: DropoutPlan,
    pub periods: usize,
    pub x0: Vector,
    pub x_hat0: Vector,
}

pub fn random_instance(rng: &mut TestRng, seed: u64) -> Instance {
    let n = rng.int(1, 5);
    let p = rng.int(1, 3);
    let dbar = rng.int(0, 4);
    let a = rng.matrix(n, n, 1.0);
    let c = rng.matrix(p, n, 1.0);
    let plant = PlantModel::new(a, None, c).unwrap();
    let mut gains = GainSchedule::zeros(SchedulingMode::RoundRobin, n, p, 1, dbar + 1);
    for row in &mut gains.gains {
        for l in row.iter_mut() {
            *l = rng.matrix(n, 1, 2.0);
        }
    }
    let period = rng.uniform(0.01, 0.2);
    let plan = rr_observer::protocol::generate_dropouts(dbar, 12, seed);
    // stop at the eighth reception so every interval has a known count
    let periods: usize = plan.counts[..8].iter().map(|d| d + 1).sum();
    Instance {
        plant,
        gains,
        period,
        max_dropouts: dbar,
        plan,
        periods,
        x0: Vector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0)),
        x_hat0: Vector::from_fn(n, |_, _| rng.uniform(-1.0, 1.0)),
    }
}

/// `ε` at successive receptions from the product of interval maps
/// `e^{A(1+d)T} − Σ_j e^{A(d−j)T} Γ L_i^j c_i`, channel `i = h mod p`.
pub fn product_errors(
    plant: &PlantModel,
    gains: &GainSchedule,
    period: f64,
    plan: &DropoutPlan,
    eps0: &Vector,
    count: usize,
) -> Vec<Vector> {
    let a = plant.a();
    let gamma = exp_integral(a, period).unwrap();
    let p = plant.outputs();
    let mut out = vec![eps0.clone()];
    let mut eps = eps0.clone();
    for h in 0..count {
        let i = h % p;
        let d = plan.counts[h];
        let c = plant.output_row(i);
        let mut m = mat_exp(a, (1 + d) as f64 * period).unwrap();
        for j in 0..=d {
            let prop = mat_exp(a, (d - j) as f64 * period).unwrap();
            m -= prop * &gamma * gains.gain(i, j) * &c;
        }
        eps = m * eps;
        out.push(eps.clone());
    }
    out
}

fn matvec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for r in 0..n {
        out[r] = (0..n).map(|c| a[r * n + c] * x[c]).sum();
    }
}

/// RK4 on `ẋ = Ax`, `x̂' = Ax̂ + L_i^σ (y_i(τ) − c_i x̂(τ))` with step close
/// to `h_target`; returns `ε` at each reception.
pub fn rk4_errors(
    plant: &PlantModel,
    gains: &GainSchedule,
    period: f64,
    plan: &DropoutPlan,
    x0: &Vector,
    x_hat0: &Vector,
    periods: usize,
    h_target: f64,
) -> Vec<Vector> {
    let n = plant.states();
    let p = plant.outputs();
    let a: Vec<f64> = plant.a().transpose().iter().copied().collect();
    let steps = (period / h_target).round().max(1.0) as usize;
    let h = period / steps as f64;
    let attempts = plan.to_attempts();
    let mut x: Vec<f64> = x0.iter().copied().collect();
    let mut xh: Vec<f64> = x_hat0.iter().copied().collect();
    let mut received = 0usize;
    let mut channel = 0usize;
    let mut sigma = 0usize;
    let mut innovation = 0.0;
    let mut out = Vec::new();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for k in 0..=periods {
        if attempts[k] {
            channel = received % p;
            received += 1;
            sigma = 0;
            let c = plant.output_row(channel);
            innovation = (0..n).map(|j| c[(0, j)] * (x[j] - xh[j])).sum();
            out.push(Vector::from_fn(n, |r, _| x[r] - xh[r]));
        } else {
            sigma += 1;
        }
        if k == periods {
            break;
        }
        let w: Vec<f64> = gains.gain(channel, sigma).iter().map(|l| l * innovation).collect();
        for _ in 0..steps {
            for (state, drive) in [(&mut x, None), (&mut xh, Some(&w))] {
                let f = |s: &[f64], out: &mut [f64]| {
                    matvec(&a, n, s, out);
                    if let Some(w) = drive {
                        for r in 0..n {
                            out[r] += w[r];
                        }
                    }
                };
                f(state, &mut k1);
                for r in 0..n {
                    tmp[r] = state[r] + 0.5 * h * k1[r];
                }
                f(&tmp, &mut k2);
                for r in 0..n {
                    tmp[r] = state[r] + 0.5 * h * k2[r];
                }
                f(&tmp, &mut k3);
                for r in 0..n {
                    tmp[r] = state[r] + h * k3[r];
                }
                f(&tmp, &mut k4);
                for r in 0..n {
                    state[r] += h / 6.0 * (k1[r] + 2.0 * k2[r] + 2.0 * k3[r] + k4[r]);
                }
            }
        }
    }
    out
}

/// Composite Simpson rule for `∫₀ᵗ e^{Aτ} dτ` with `panels` (even) panels.
pub fn simpson_exp_integral(a: &Matrix, t: f64, panels: usize) -> Matrix {
    let h = t / panels as f64;
    let step = mat_exp(a, h).unwrap();
    let n = a.nrows();
    let mut power = Matrix::identity(n, n);
    let mut sum = Matrix::zeros(n, n);
    for j in 0..=panels {
        let w = if j == 0 || j == panels {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += &power * w;
        power = &step * power;
    }
    sum * (h / 3.0)
}

pub fn relative_error(got: &Vector, want: &Vector) -> f64 {
    let scale = want.norm();
    if scale == 0.0 {
        got.norm()
    } else {
        (got - want).norm() / scale
    }
}
