//! Observer-gain synthesis: the propagation matrices of one inter-reception
//! interval, the switched-Lyapunov LMIs, a reference solver, gain recovery
//! and solver-independent certificate checks.

mod gains;
mod lmi;
mod newton;
mod solver;

pub use gains::{
    closed_loop_matrix, recover_gains, ArtifactError, verify_certificate, Certificate, GainSchedule,
    VerificationReport, DEFAULT_CONDITION_LIMIT,
};
pub use lmi::{assemble_lmis, AffineLmi, AssembledLmis, LmiKind, LmiSystem, Normalization, VarLayout};
pub use solver::{BarrierSolver, LmiSolver, SolveOutcome, SolverOptions, Verdict};

use thiserror::Error;

use crate::linalg::{self, hstack, LinalgError, Matrix};
use crate::plant::PlantModel;
use crate::protocol::SchedulingMode;

/// Default strict-inequality margin: `≺ 0` is enforced as `⪯ −ε·I`.
pub const DEFAULT_FEASIBILITY_MARGIN: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("relaxation scalar lambda must be nonzero and finite, got {0}")]
    InvalidLambda(f64),
    #[error("sampling period must be positive and finite, got {0}")]
    InvalidPeriod(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("X·Γ for group {group}, d={d} is ill-conditioned (condition number {condition:.3e})")]
    IllConditioned { group: usize, d: usize, condition: f64 },
    #[error("certificate shape does not match the problem: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisProblem {
    pub plant: PlantModel,
    pub period: f64,
    pub max_dropouts: usize,
    pub lambda: f64,
    pub mode: SchedulingMode,
}

impl SynthesisProblem {
    pub fn new(
        plant: PlantModel,
        period: f64,
        max_dropouts: usize,
        lambda: f64,
        mode: SchedulingMode,
    ) -> Result<Self, SynthError> {
        let problem = Self {
            plant,
            period,
            max_dropouts,
            lambda,
            mode,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.period.is_finite() && self.period > 0.0) {
            return Err(SynthError::InvalidPeriod(self.period));
        }
        if !self.lambda.is_finite() || self.lambda == 0.0 {
            return Err(SynthError::InvalidLambda(self.lambda));
        }
        Ok(())
    }

    /// Channel groups carrying their own gain family.
    pub fn groups(&self) -> usize {
        match self.mode {
            SchedulingMode::RoundRobin => self.plant.outputs(),
            SchedulingMode::Concentrated => 1,
        }
    }

    /// Columns of each gain / `G` block.
    pub fn gain_columns(&self) -> usize {
        match self.mode {
            SchedulingMode::RoundRobin => 1,
            SchedulingMode::Concentrated => self.plant.outputs(),
        }
    }

    pub fn group_output(&self, group: usize) -> Matrix {
        self.plant.group_output(self.mode, group)
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }
}

/// Matrices describing one inter-reception interval with `d` dropouts:
/// `𝒜_d = e^{A(1+d)T}`, `Γ = ∫₀ᵀ e^{Aτ}dτ` and
/// `𝒯_d = Γ·(𝒜_{d−1}, …, 𝒜_0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptMatrices {
    pub period: f64,
    pub propagators: Vec<Matrix>,
    pub gamma: Matrix,
    pub stacks: Vec<Matrix>,
}

impl ScriptMatrices {
    pub fn max_dropouts(&self) -> usize {
        self.propagators.len() - 1
    }

    pub fn states(&self) -> usize {
        self.gamma.nrows()
    }

    /// `𝒜_d`.
    pub fn propagator(&self, d: usize) -> &Matrix {
        &self.propagators[d]
    }

    /// `𝒯_d`.
    pub fn stack(&self, d: usize) -> &Matrix {
        &self.stacks[d]
    }

    /// Horizontal stack `(𝒜_{d−1}, …, 𝒜_0)`; empty for `d = 0`.
    pub fn chain(&self, d: usize) -> Matrix {
        let n = self.states();
        if d == 0 {
            return Matrix::zeros(n, 0);
        }
        let blocks: Vec<&Matrix> = (0..d).rev().map(|k| &self.propagators[k]).collect();
        hstack(&blocks)
    }
}

pub fn build_script_matrices(
    plant: &PlantModel,
    period: f64,
    max_dropouts: usize,
) -> Result<ScriptMatrices, SynthError> {
    if !(period.is_finite() && period > 0.0) {
        return Err(SynthError::InvalidPeriod(period));
    }
    let a = plant.a();
    let n = a.nrows();
    let gamma = linalg::exp_integral(a, period)?;
    let propagators = (0..=max_dropouts)
        .map(|d| linalg::mat_exp(a, (1 + d) as f64 * period))
        .collect::<Result<Vec<_>, _>>()?;
    let identity = Matrix::identity(n, n);
    let stacks = (0..=max_dropouts)
        .map(|d| {
            let mut blocks: Vec<&Matrix> = (0..d).rev().map(|k| &propagators[k]).collect();
            blocks.push(&identity);
            &gamma * hstack(&blocks)
        })
        .collect();
    Ok(ScriptMatrices {
        period,
        propagators,
        gamma,
        stacks,
    })
}

/// Synthesis outcome with the intermediate artifacts kept for inspection.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub scripts: ScriptMatrices,
    pub outcome: SolveOutcome,
    pub certificate: Option<Certificate>,
    pub gains: Option<GainSchedule>,
}

/// Scripts → LMIs → solve → gain recovery.
pub fn synthesize(
    problem: &SynthesisProblem,
    solver: &dyn LmiSolver,
) -> Result<Synthesis, SynthError> {
    problem.validate()?;
    let scripts = build_script_matrices(&problem.plant, problem.period, problem.max_dropouts)?;
    let assembled = assemble_lmis(problem, &scripts)?;
    let outcome = solver.solve(&assembled.system);
    let (certificate, gains) = match &outcome.verdict {
        Verdict::Feasible { values, margin } => {
            let cert = Certificate::from_values(problem, &assembled.layout, values, *margin)?;
            let gains = recover_gains(&cert, &scripts, problem, DEFAULT_CONDITION_LIMIT)?;
            (Some(cert), Some(gains))
        }
        _ => (None, None),
    };
    Ok(Synthesis {
        scripts,
        outcome,
        certificate,
        gains,
    })
}
