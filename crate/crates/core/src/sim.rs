//! Exact event-driven simulation of plant and observer.
//!
//! Between sampling instants the counters, the held sample and the held
//! estimate `x̂(τ)` are constant, so the observer sees a constant injection
//! `w = L_i^σ·(y_i(τ) − c_i x̂(τ))` and both states propagate in closed form:
//!
//! ```text
//! x(t+s)  = e^{As} x(t)  + Γ(s) B u
//! x̂(t+s) = e^{As} x̂(t) + Γ(s) (B u + w)
//! ```
//!
//! The gain in effect after a reception from channel `i` is `L_i^σ`, where
//! `σ` counts the attempts lost since that reception.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::io::fmt_f64;
use crate::linalg::{exp_and_integral, spectral_norm, LinalgError, Matrix, Vector};
use crate::plant::PlantModel;
use crate::protocol::{DropoutPlan, Protocol, ProtocolError, SchedulerState, SchedulingMode};
use crate::synth::GainSchedule;

/// Default number of trace rows per sampling period.
pub const DEFAULT_SUBSTEPS: usize = 10;
/// Grid points per sampling period used when maximizing `‖M_i(t)‖`.
pub const INTERSAMPLE_GRID: usize = 2000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("dropout count {d} needs gains up to depth {d}, schedule stops at {available}")]
    MissingGain { d: usize, available: usize },
    #[error("dropout plan covers {available} sampling instants, horizon needs {needed}")]
    PlanTooShort { needed: usize, available: usize },
    #[error("gain schedule has {got} groups, plant and mode need {expected}")]
    GroupMismatch { expected: usize, got: usize },
    #[error("{0}")]
    Dimension(String),
    #[error("output grid step {step} does not divide the sampling period {period}")]
    Grid { step: f64, period: f64 },
    #[error("propagation of {duration} exceeds one sampling period {period}")]
    DurationTooLong { duration: f64, period: f64 },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Plant input held constant over each sampling period.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum InputSignal {
    #[default]
    Zero,
    /// Value for period `k`; the last value is held past the end.
    Held(Vec<Vector>),
}

impl InputSignal {
    fn value(&self, k: u64, inputs: usize) -> Vector {
        match self {
            InputSignal::Zero => Vector::zeros(inputs),
            InputSignal::Held(values) => match values.get(k as usize).or(values.last()) {
                Some(v) => v.clone(),
                None => Vector::zeros(inputs),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopState {
    pub t: f64,
    pub x: Vector,
    /// `x − x̂`, carried on its own so it never suffers cancellation.
    pub eps: Vector,
    /// `y_i(τ)` for the last received group.
    pub held_sample: Vector,
    /// `y_i(τ) − c_i x̂(τ) = c_i ε(τ)`.
    pub held_innovation: Vector,
    /// Last received group, 0-based.
    pub held_group: usize,
    pub scheduler: SchedulerState,
}

impl LoopState {
    pub fn x_hat(&self) -> Vector {
        &self.x - &self.eps
    }

    pub fn error(&self) -> Vector {
        self.eps.clone()
    }
}

/// Advances `state` by `duration ≤ T` with the counters frozen.
pub fn propagate_interval(
    plant: &PlantModel,
    gains: &GainSchedule,
    state: &LoopState,
    duration: f64,
    period: f64,
    input: &Vector,
) -> Result<LoopState, SimError> {
    if duration > period * (1.0 + 1e-12) {
        return Err(SimError::DurationTooLong { duration, period });
    }
    let (e, gamma) = exp_and_integral(plant.a(), duration)?;
    Ok(advance(plant, gains, state, duration, &e, &gamma, input))
}

fn advance(
    plant: &PlantModel,
    gains: &GainSchedule,
    state: &LoopState,
    duration: f64,
    e: &Matrix,
    gamma: &Matrix,
    input: &Vector,
) -> LoopState {
    let gain = gains.gain(state.held_group, state.scheduler.sigma);
    let drive = plant.b() * input;
    let injection = gain * &state.held_innovation;
    LoopState {
        t: state.t + duration,
        x: e * &state.x + gamma * &drive,
        eps: e * &state.eps - gamma * injection,
        ..state.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub x: Vector,
    pub x_hat: Vector,
    pub eps: Vector,
    /// Protocol counter `π` (1-based, next sampler to transmit).
    pub pi: usize,
    pub sigma: usize,
    /// Group whose gain is in effect (0-based).
    pub gain_group: usize,
}

impl TraceRow {
    pub fn error(&self) -> Vector {
        self.eps.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReceptionRecord {
    pub k: u64,
    pub time: f64,
    /// Received group, 1-based.
    pub channel: usize,
    /// Dropouts before the next reception, when the plan defines it.
    pub dropouts_after: Option<usize>,
    pub error: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub period: f64,
    pub substeps: usize,
    pub rows: Vec<TraceRow>,
    pub receptions: Vec<ReceptionRecord>,
    pub plan: DropoutPlan,
}

impl SimulationTrace {
    pub fn error_norms(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.error().norm()).collect()
    }

    /// CSV with header `t,x1..xn,xhat1..xhatn,eps_norm,pi,sigma`.
    pub fn to_csv(&self) -> String {
        let n = self.rows.first().map_or(0, |r| r.x.len());
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x{i}").unwrap();
        }
        for i in 1..=n {
            write!(out, ",xhat{i}").unwrap();
        }
        out.push_str(",eps_norm,pi,sigma\n");
        for row in &self.rows {
            out.push_str(&fmt_f64(row.t));
            for v in row.x.iter().chain(row.x_hat.iter()) {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            write!(out, ",{},{},{}", fmt_f64(row.error().norm()), row.pi, row.sigma).unwrap();
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }

    /// Largest `‖ε(t)‖ / ‖ε(τ(t))‖` over the rows, `τ(t)` being the latest
    /// reception at or before `t`. Rows whose reference error vanishes are
    /// skipped.
    pub fn max_intersample_ratio(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let mut idx = 0;
        for row in &self.rows {
            while idx + 1 < self.receptions.len()
                && self.receptions[idx + 1].time <= row.t + 1e-9 * self.period
            {
                idx += 1;
            }
            let Some(rec) = self.receptions.get(idx) else {
                continue;
            };
            let base = rec.error.norm();
            if base > 0.0 {
                worst = worst.max(row.error().norm() / base);
            }
        }
        worst
    }

    /// `ε_hᵀ P_{i_h}^{d_h} ε_h` at each reception with a known following
    /// dropout count.
    pub fn lyapunov_values(&self, p: &[Vec<crate::linalg::SymmetricMatrix>]) -> Vec<f64> {
        self.receptions
            .iter()
            .filter_map(|rec| {
                let d = rec.dropouts_after?;
                let pm = p.get(rec.channel - 1)?.get(d)?.as_matrix();
                Some(rec.error.dot(&(pm * &rec.error)))
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SimulationSetup<'a> {
    pub plant: &'a PlantModel,
    pub gains: &'a GainSchedule,
    pub mode: SchedulingMode,
    pub period: f64,
    pub x0: Vector,
    pub x_hat0: Vector,
    pub plan: &'a DropoutPlan,
    pub horizon: f64,
    /// Trace rows per period.
    pub substeps: usize,
    pub input: InputSignal,
}

impl<'a> SimulationSetup<'a> {
    pub fn new(
        plant: &'a PlantModel,
        gains: &'a GainSchedule,
        mode: SchedulingMode,
        period: f64,
        plan: &'a DropoutPlan,
        horizon: f64,
    ) -> Self {
        let n = plant.states();
        Self {
            plant,
            gains,
            mode,
            period,
            x0: Vector::zeros(n),
            x_hat0: Vector::zeros(n),
            plan,
            horizon,
            substeps: DEFAULT_SUBSTEPS,
            input: InputSignal::Zero,
        }
    }
}

/// Number of trace rows per period for an output grid step.
pub fn substeps_for(step: f64, period: f64) -> Result<usize, SimError> {
    let ratio = period / step;
    let m = ratio.round();
    if !(step > 0.0) || m < 1.0 || (ratio - m).abs() > 1e-9 * m {
        return Err(SimError::Grid { step, period });
    }
    Ok(m as usize)
}

/// Runs the closed loop on `[0, horizon]`.
pub fn simulate(setup: &SimulationSetup) -> Result<SimulationTrace, SimError> {
    let plant = setup.plant;
    let gains = setup.gains;
    let n = plant.states();
    let period = setup.period;
    if setup.x0.len() != n || setup.x_hat0.len() != n {
        return Err(SimError::Dimension(format!(
            "initial states must have {n} entries"
        )));
    }
    let protocol = Protocol::new(plant.outputs(), gains.max_dropouts(), setup.mode)?;
    if gains.groups() != protocol.groups() {
        return Err(SimError::GroupMismatch {
            expected: protocol.groups(),
            got: gains.groups(),
        });
    }
    let columns = match setup.mode {
        SchedulingMode::RoundRobin => 1,
        SchedulingMode::Concentrated => plant.outputs(),
    };
    if gains.gains.iter().flatten().any(|g| g.nrows() != n || g.ncols() != columns) {
        return Err(SimError::Dimension(format!(
            "gains must be {n}x{columns}"
        )));
    }
    let periods = ((setup.horizon / period) - 1e-9).ceil().max(0.0) as u64;
    let attempts = setup.plan.to_attempts();
    if (attempts.len() as u64) < periods {
        return Err(SimError::PlanTooShort {
            needed: periods as usize,
            available: attempts.len(),
        });
    }
    let used_receptions = attempts[..periods as usize].iter().filter(|&&a| a).count();
    for &d in setup.plan.counts.iter().take(used_receptions) {
        if d > gains.max_dropouts() {
            return Err(SimError::MissingGain {
                d,
                available: gains.max_dropouts(),
            });
        }
    }

    let m = setup.substeps.max(1);
    let offsets: Vec<(Matrix, Matrix)> = (1..=m)
        .map(|j| exp_and_integral(plant.a(), period * j as f64 / m as f64))
        .collect::<Result<_, _>>()?;

    let outputs = protocol.groups();
    let mut state = LoopState {
        t: 0.0,
        x: setup.x0.clone(),
        eps: &setup.x0 - &setup.x_hat0,
        held_sample: Vector::zeros(columns),
        held_innovation: Vector::zeros(columns),
        held_group: 0,
        scheduler: SchedulerState::initial(),
    };
    let mut rows = Vec::with_capacity(periods as usize * m + 1);
    let mut receptions = Vec::new();
    let row_of = |s: &LoopState| TraceRow {
        t: s.t,
        x: s.x.clone(),
        x_hat: s.x_hat(),
        eps: s.eps.clone(),
        pi: s.scheduler.pi,
        sigma: s.scheduler.sigma,
        gain_group: s.held_group,
    };

    for k in 0..periods {
        state.t = k as f64 * period;
        if attempts[k as usize] {
            let group = state.scheduler.pi - 1;
            let output = plant.group_output(setup.mode, group);
            let sample = &output * &state.x;
            state.held_innovation = &output * &state.eps;
            state.held_sample = sample;
            state.held_group = group;
            let h = receptions.len();
            receptions.push(ReceptionRecord {
                k,
                time: state.t,
                channel: group + 1,
                dropouts_after: setup.plan.counts.get(h).copied(),
                error: state.error(),
            });
        }
        state.scheduler = protocol.step(state.scheduler, attempts[k as usize])?;
        debug_assert!(outputs >= state.held_group + 1);
        rows.push(row_of(&state));
        let u = setup.input.value(k, plant.inputs());
        for (j, (e, gamma)) in offsets.iter().enumerate().take(m - 1) {
            let s = period * (j + 1) as f64 / m as f64;
            let mut inner = advance(plant, gains, &state, s, e, gamma, &u);
            inner.t = (k as f64 + (j + 1) as f64 / m as f64) * period;
            rows.push(row_of(&inner));
        }
        let (e, gamma) = &offsets[m - 1];
        state = advance(plant, gains, &state, period, e, gamma, &u);
    }
    state.t = periods as f64 * period;
    rows.push(row_of(&state));

    Ok(SimulationTrace {
        period,
        substeps: m,
        rows,
        receptions,
        plan: setup.plan.clone(),
    })
}

/// `α = max ‖M_i(t)‖₂` over groups `i` and `t ∈ [0, (1+d̄)T]`, where
/// `M_i(t) = e^{At} − ∫₀ᵗ e^{A(t−τ)} L_i^{σ(τ)} dτ · c_i` and `σ(τ) = ⌊τ/T⌋`.
///
/// Each period is scanned on a uniform grid of [`INTERSAMPLE_GRID`] steps;
/// the best grid point is refined by golden-section search on its two
/// neighbouring cells.
pub fn intersample_bound(
    plant: &PlantModel,
    gains: &GainSchedule,
    mode: SchedulingMode,
    max_dropouts: usize,
    period: f64,
) -> Result<f64, SimError> {
    if gains.max_dropouts() < max_dropouts {
        return Err(SimError::MissingGain {
            d: max_dropouts,
            available: gains.max_dropouts(),
        });
    }
    let n = plant.states();
    let a = plant.a();
    let grid: Vec<(Matrix, Matrix)> = (0..=INTERSAMPLE_GRID)
        .map(|j| exp_and_integral(a, period * j as f64 / INTERSAMPLE_GRID as f64))
        .collect::<Result<_, _>>()?;
    let h = period / INTERSAMPLE_GRID as f64;
    let mut alpha: f64 = 0.0;
    for group in 0..gains.groups() {
        let output = plant.group_output(mode, group);
        let mut start = Matrix::identity(n, n);
        for d in 0..=max_dropouts {
            let correction = gains.gain(group, d) * &output;
            let eval = |e: &Matrix, gamma: &Matrix| e * &start - gamma * &correction;
            let mut best = (0.0, 0);
            for (j, (e, gamma)) in grid.iter().enumerate() {
                let v = spectral_norm(&eval(e, gamma));
                if v > best.0 {
                    best = (v, j);
                }
            }
            let lo = best.1.saturating_sub(1) as f64 * h;
            let hi = (best.1 + 1).min(INTERSAMPLE_GRID) as f64 * h;
            let f = |s: f64| -> f64 {
                exp_and_integral(a, s)
                    .map(|(e, gamma)| spectral_norm(&eval(&e, &gamma)))
                    .unwrap_or(0.0)
            };
            alpha = alpha.max(best.0).max(golden_max(f, lo, hi, 60));
            let (e, gamma) = &grid[INTERSAMPLE_GRID];
            start = eval(e, gamma);
        }
    }
    Ok(alpha)
}

fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = f1.max(f2);
    for _ in 0..iters {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2);
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1);
        }
        best = best.max(f1).max(f2);
    }
    best
}
