//! Reference LMI feasibility solver.
//!
//! A system `F_j(v) ≺ 0` is turned into the margin program
//!
//! ```text
//! maximize t   s.t.  F_j(v) + t·I ⪯ 0,   |v_k| ≤ R,   t ≤ R,   aᵀv = b
//! ```
//!
//! which is solved by a primal log-det barrier method: for a decreasing
//! sequence `μ`, the barrier `t/μ + Σ log det S_j + Σ log(box slacks)` is
//! maximized by damped Newton steps projected onto the normalization
//! hyperplane. At each center, `t* ≤ t(μ) + ν·μ` where `ν` is the barrier
//! parameter, which gives the infeasibility test. Any center with a
//! verified positive margin yields a feasible point; homogeneous systems
//! are then rescaled to reach the requested margin.
//!
//! Hessian entries come from low-rank factors of the coefficient matrices,
//! and the Newton system is reduced by block elimination (see `newton`)
//! before the dense factorization.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::newton::Elimination;

use crate::linalg::Matrix;

use super::lmi::LmiSystem;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Required margin `ε`: every `F_j(v) ⪯ −ε·I` in the returned point.
    pub margin: f64,
    /// Box bound `R` on every decision variable.
    pub box_bound: f64,
    pub max_newton_steps: usize,
    /// Newton steps allowed for a single centering.
    pub max_centering_steps: usize,
    pub initial_mu: f64,
    pub mu_factor: f64,
    pub min_mu: f64,
    /// Infeasible once the optimal margin is provably below `−tol`.
    pub infeasibility_tol: f64,
    /// Stop on a feasible center once `ν·μ ≤ ratio·t`.
    pub optimality_ratio: f64,
    /// Centering stops when the squared Newton decrement is below this.
    pub centering_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            margin: super::DEFAULT_FEASIBILITY_MARGIN,
            box_bound: 1e3,
            max_newton_steps: 600,
            max_centering_steps: 60,
            initial_mu: 1.0,
            mu_factor: 0.2,
            min_mu: 1e-14,
            infeasibility_tol: 1e-9,
            optimality_ratio: 1.0,
            centering_tol: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// `values` satisfies every constraint with at least `margin`.
    Feasible { values: Vec<f64>, margin: f64 },
    /// The margin program's optimum is below `margin_upper_bound < 0`.
    /// Only meaningful inside the variable box.
    Infeasible { margin_upper_bound: f64 },
    /// Neither conclusion was reached.
    Undecided { reason: String, best_margin: f64 },
}

impl Verdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Verdict::Feasible { .. })
    }

    /// One-letter code: `F`, `I` or `U`.
    pub fn code(&self) -> char {
        match self {
            Verdict::Feasible { .. } => 'F',
            Verdict::Infeasible { .. } => 'I',
            Verdict::Undecided { .. } => 'U',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOutcome {
    pub verdict: Verdict,
    pub newton_steps: usize,
    pub centerings: usize,
}

/// Backend interface: affine symmetric constraints in, assignment or
/// verdict out.
pub trait LmiSolver: Sync {
    fn solve(&self, system: &LmiSystem) -> SolveOutcome;
}

#[derive(Debug, Clone, Default)]
pub struct BarrierSolver {
    pub options: SolverOptions,
}

impl BarrierSolver {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }
}

/// Per-block data reused across iterations.
struct BlockData {
    dim: usize,
    /// Global variable index per local term; `t` is handled apart.
    vars: Vec<usize>,
    /// Every coefficient as `Σ s_r q_r q_rᵀ`, columns stacked.
    factors: Matrix,
    /// Local term owning each factor column.
    owner: Vec<usize>,
    weight: Vec<f64>,
}

/// Symmetric low-rank factors `F = Q·diag(s)·Qᵀ`.
fn low_rank(f: &Matrix) -> (Matrix, Vec<f64>) {
    let dim = f.nrows();
    let norm = f.norm();
    if norm == 0.0 {
        return (Matrix::zeros(dim, 0), Vec::new());
    }
    // orthonormal basis of the column space by twice-applied Gram-Schmidt
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for j in 0..dim {
        let mut c: DVector<f64> = f.column(j).into_owned();
        if c.norm() <= 1e-13 * norm {
            continue;
        }
        for _ in 0..2 {
            for u in &basis {
                let proj = u.dot(&c);
                c.axpy(-proj, u, 1.0);
            }
        }
        let len = c.norm();
        if len > 1e-12 * norm {
            basis.push(c / len);
        }
        if basis.len() == dim {
            break;
        }
    }
    let u = Matrix::from_columns(&basis);
    let core = u.transpose() * f * &u;
    let core = (&core + core.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(core);
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i].abs() > 1e-14 * norm)
        .collect();
    let q = &u * eig.eigenvectors.select_columns(&keep);
    (q, keep.iter().map(|&i| eig.eigenvalues[i]).collect())
}

struct Problem<'a> {
    system: &'a LmiSystem,
    blocks: Vec<BlockData>,
    m: usize,
    bound: f64,
    equality: Option<DVector<f64>>,
    nu: f64,
    elimination: Elimination,
}

struct Point {
    y: Vec<f64>,
    phi: f64,
    inverses: Vec<Matrix>,
}

impl<'a> Problem<'a> {
    fn new(system: &'a LmiSystem, bound: f64) -> Self {
        let m = system.num_vars;
        let blocks: Vec<BlockData> = system
            .lmis
            .iter()
            .map(|lmi| {
                let dim = lmi.dim();
                let mut columns = Vec::new();
                let mut owner = Vec::new();
                let mut weight = Vec::new();
                for (a, (_, f)) in lmi.terms.iter().enumerate() {
                    let (q, w) = low_rank(f);
                    columns.extend(q.column_iter().map(|c| c.into_owned()));
                    owner.extend(std::iter::repeat_n(a, w.len()));
                    weight.extend(w);
                }
                let factors = if columns.is_empty() {
                    Matrix::zeros(dim, 0)
                } else {
                    Matrix::from_columns(&columns)
                };
                BlockData {
                    dim,
                    vars: lmi.terms.iter().map(|(k, _)| *k).collect(),
                    factors,
                    owner,
                    weight,
                }
            })
            .collect();
        let equality = system.normalization.as_ref().map(|norm| {
            let mut a = DVector::zeros(m + 1);
            for &(k, c) in &norm.coeffs {
                a[k] += c;
            }
            a
        });
        let nu = blocks.iter().map(|b| b.dim as f64).sum::<f64>() + 2.0 * m as f64 + 1.0;
        let block_vars: Vec<Vec<usize>> = blocks.iter().map(|b| b.vars.clone()).collect();
        let elimination = Elimination::new(m + 1, &block_vars);
        Self {
            system,
            blocks,
            m,
            bound,
            equality,
            nu,
            elimination,
        }
    }

    fn slack(&self, j: usize, y: &[f64]) -> Matrix {
        let lmi = &self.system.lmis[j];
        let t = y[self.m];
        let mut s = -lmi.evaluate(&y[..self.m]);
        for i in 0..lmi.dim() {
            s[(i, i)] -= t;
        }
        s
    }

    /// Barrier value and slack inverses, or `None` outside the domain.
    fn evaluate(&self, y: Vec<f64>, mu: f64) -> Option<Point> {
        let r = self.bound;
        let mut phi = y[self.m] / mu;
        for &v in &y[..self.m] {
            let (up, lo) = (r - v, r + v);
            if up <= 0.0 || lo <= 0.0 {
                return None;
            }
            phi += up.ln() + lo.ln();
        }
        let up = r - y[self.m];
        if up <= 0.0 {
            return None;
        }
        phi += up.ln();
        let mut inverses = Vec::with_capacity(self.blocks.len());
        for j in 0..self.blocks.len() {
            let chol = Cholesky::new(self.slack(j, &y))?;
            let l = chol.l_dirty();
            let mut logdet = 0.0;
            for i in 0..l.nrows() {
                logdet += 2.0 * l[(i, i)].ln();
            }
            phi += logdet;
            inverses.push(chol.inverse());
        }
        if !phi.is_finite() {
            return None;
        }
        Some(Point { y, phi, inverses })
    }

    /// Ascent direction and squared Newton decrement.
    fn newton(&self, point: &Point, mu: f64) -> Option<(DVector<f64>, f64)> {
        let dim = self.m + 1;
        let r = self.bound;
        let mut grad = DVector::zeros(dim);
        let mut hess = DMatrix::zeros(dim, dim);
        grad[self.m] += 1.0 / mu;
        for k in 0..self.m {
            let v = point.y[k];
            let (up, lo) = (r - v, r + v);
            grad[k] += -1.0 / up + 1.0 / lo;
            hess[(k, k)] += 1.0 / (up * up) + 1.0 / (lo * lo);
        }
        let up = r - point.y[self.m];
        grad[self.m] -= 1.0 / up;
        hess[(self.m, self.m)] += 1.0 / (up * up);

        let t = self.m;
        for (block, w) in self.blocks.iter().zip(&point.inverses) {
            // tr(W F_a W F_b) = Σ s_r s_q (q_rᵀ W q_q)² over the factors
            let wq = w * &block.factors;
            let gram = block.factors.tr_mul(&wq);
            let cols = block.owner.len();
            grad[t] -= w.trace();
            hess[(t, t)] += w.norm_squared();
            for r in 0..cols {
                let kr = block.vars[block.owner[r]];
                let sr = block.weight[r];
                grad[kr] -= sr * gram[(r, r)];
                let cross = sr * wq.column(r).norm_squared();
                hess[(kr, t)] += cross;
                hess[(t, kr)] += cross;
                for q in 0..cols {
                    let g = gram[(r, q)];
                    hess[(kr, block.vars[block.owner[q]])] += sr * block.weight[q] * g * g;
                }
            }
        }

        let factor = match self.elimination.factor(&hess) {
            Some(f) => f,
            None => {
                let scale = hess.diagonal().max().max(1.0_f64);
                for i in 0..dim {
                    hess[(i, i)] += 1e-12 * scale;
                }
                self.elimination.factor(&hess)?
            }
        };
        let mut step = factor.solve(&grad);
        if let Some(a) = &self.equality {
            let ha = factor.solve(a);
            let denom = a.dot(&ha);
            if denom > 0.0 {
                let coef = a.dot(&step) / denom;
                step -= ha * coef;
            }
        }
        let decrement = grad.dot(&step);
        if !decrement.is_finite() {
            return None;
        }
        Some((step, decrement.max(0.0)))
    }
}

enum Centering {
    Centered,
    Stalled,
    OutOfSteps,
}

impl BarrierSolver {
    fn center(
        &self,
        problem: &Problem,
        point: &mut Point,
        mu: f64,
        steps: &mut usize,
    ) -> Centering {
        // φ depends on μ through the t/μ term only.
        point.phi = problem
            .evaluate(point.y.clone(), mu)
            .map_or(point.phi, |p| p.phi);
        let start = *steps;
        loop {
            if *steps >= self.options.max_newton_steps {
                return Centering::OutOfSteps;
            }
            if *steps - start >= self.options.max_centering_steps {
                return Centering::Stalled;
            }
            let (step, decrement) = match problem.newton(point, mu) {
                Some(s) => s,
                None => return Centering::Stalled,
            };
            if decrement <= self.options.centering_tol {
                return Centering::Centered;
            }
            *steps += 1;
            let mut alpha = 1.0;
            let accepted = loop {
                let trial: Vec<f64> = point
                    .y
                    .iter()
                    .zip(step.iter())
                    .map(|(y, s)| y + alpha * s)
                    .collect();
                if let Some(next) = problem.evaluate(trial, mu) {
                    if next.phi >= point.phi + 0.25 * alpha * decrement {
                        break Some(next);
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break None;
                }
            };
            match accepted {
                Some(next) => *point = next,
                None => return Centering::Stalled,
            }
        }
    }

    /// Verified candidate from a center, rescaled for homogeneous systems.
    fn candidate(&self, system: &LmiSystem, v: &[f64]) -> Option<(Vec<f64>, f64)> {
        let margin = system.margin(v);
        if !(margin > 0.0) {
            return None;
        }
        let scale = system
            .lmis
            .iter()
            .map(|l| l.evaluate(v).norm())
            .fold(0.0, f64::max);
        if margin < 1e-10 * scale {
            return None;
        }
        if margin >= self.options.margin {
            return Some((v.to_vec(), margin));
        }
        if !system.is_homogeneous() {
            return None;
        }
        let factor = 2.0 * self.options.margin / margin;
        let scaled: Vec<f64> = v.iter().map(|x| x * factor).collect();
        let m2 = system.margin(&scaled);
        (m2 >= self.options.margin).then_some((scaled, m2))
    }
}

impl LmiSolver for BarrierSolver {
    fn solve(&self, system: &LmiSystem) -> SolveOutcome {
        let opts = &self.options;
        let problem = Problem::new(system, opts.box_bound);
        let m = problem.m;
        let mut steps = 0;
        let mut centerings = 0;
        let undecided = |reason: &str, best: f64, steps, centerings| SolveOutcome {
            verdict: Verdict::Undecided {
                reason: reason.to_string(),
                best_margin: best,
            },
            newton_steps: steps,
            centerings,
        };

        let mut v0 = vec![0.0; m];
        if let (Some(norm), Some(a)) = (&system.normalization, &problem.equality) {
            let aa = a.norm_squared();
            if aa == 0.0 {
                return undecided("degenerate normalization", f64::NEG_INFINITY, 0, 0);
            }
            for k in 0..m {
                v0[k] = a[k] * norm.rhs / aa;
            }
        }
        if v0.iter().any(|x| x.abs() >= opts.box_bound) {
            return undecided("starting point outside the variable box", f64::NEG_INFINITY, 0, 0);
        }
        let t0 = system.margin(&v0) - 1.0;
        let mut y = v0;
        y.push(t0.min(opts.box_bound - 1.0));
        let mut mu = opts.initial_mu;
        let mut point = match problem.evaluate(y, mu) {
            Some(p) => p,
            None => return undecided("infeasible starting slack", f64::NEG_INFINITY, 0, 0),
        };

        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut best_t = f64::NEG_INFINITY;
        loop {
            let status = self.center(&problem, &mut point, mu, &mut steps);
            centerings += 1;
            let t = point.y[m];
            best_t = best_t.max(t);
            let gap = problem.nu * mu;
            if t > 0.0 {
                if let Some((vals, margin)) = self.candidate(system, &point.y[..m]) {
                    if best.as_ref().is_none_or(|(_, bm)| margin > *bm) || !system.is_homogeneous() {
                        best = Some((vals, margin));
                    }
                }
            }
            let done_feasible = best.is_some()
                && (gap <= opts.optimality_ratio * t || mu * opts.mu_factor < opts.min_mu);
            if done_feasible || (best.is_some() && !matches!(status, Centering::Centered)) {
                let (values, margin) = best.unwrap();
                return SolveOutcome {
                    verdict: Verdict::Feasible { values, margin },
                    newton_steps: steps,
                    centerings,
                };
            }
            match status {
                Centering::Centered => {}
                Centering::Stalled => return undecided("Newton iteration stalled", best_t, steps, centerings),
                Centering::OutOfSteps => {
                    return undecided("iteration limit reached", best_t, steps, centerings)
                }
            }
            if t + gap < -opts.infeasibility_tol {
                return SolveOutcome {
                    verdict: Verdict::Infeasible {
                        margin_upper_bound: t + gap,
                    },
                    newton_steps: steps,
                    centerings,
                };
            }
            mu *= opts.mu_factor;
            if mu < opts.min_mu {
                return undecided("barrier parameter exhausted near zero margin", best_t, steps, centerings);
            }
        }
    }
}
