use serde::{Deserialize, Serialize};

use crate::io::{docs_from, docs_to, MatrixDoc, MatrixDocError, Precise};
use crate::linalg::{sym_lambda_max, vstack, Matrix, SymmetricMatrix};
use crate::protocol::SchedulingMode;

use super::lmi::{decrease_block, VarLayout};
use super::{ScriptMatrices, SynthError, SynthesisProblem};

/// Largest accepted condition number of `X_i^d·Γ` during gain recovery.
pub const DEFAULT_CONDITION_LIMIT: f64 = 1e12;

/// Solved LMI blocks, indexed `[group][d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub mode: SchedulingMode,
    pub lambda: f64,
    pub period: f64,
    pub p: Vec<Vec<SymmetricMatrix>>,
    pub x: Vec<Vec<Matrix>>,
    pub g: Vec<Vec<Matrix>>,
    pub feasibility_margin: f64,
}

impl Certificate {
    pub fn from_values(
        problem: &SynthesisProblem,
        layout: &VarLayout,
        values: &[f64],
        margin: f64,
    ) -> Result<Self, SynthError> {
        let mut p = Vec::new();
        let mut x = Vec::new();
        let mut g = Vec::new();
        for group in 0..layout.groups {
            let mut pr = Vec::new();
            let mut xr = Vec::new();
            let mut gr = Vec::new();
            for d in 0..layout.depth {
                pr.push(SymmetricMatrix::new(layout.p_matrix(values, group, d))?);
                xr.push(layout.x_matrix(values, group, d));
                gr.push(layout.g_matrix(values, group, d));
            }
            p.push(pr);
            x.push(xr);
            g.push(gr);
        }
        Ok(Self {
            mode: problem.mode,
            lambda: problem.lambda,
            period: problem.period,
            p,
            x,
            g,
            feasibility_margin: margin,
        })
    }

    pub fn groups(&self) -> usize {
        self.p.len()
    }

    pub fn depth(&self) -> usize {
        self.p.first().map_or(0, Vec::len)
    }

    /// Flat variable vector in the assembly layout.
    pub fn to_values(&self, layout: &VarLayout) -> Vec<f64> {
        let mut v = vec![0.0; layout.num_vars()];
        for group in 0..self.groups() {
            for d in 0..self.depth() {
                layout.store(
                    &mut v,
                    group,
                    d,
                    self.p[group][d].as_matrix(),
                    &self.x[group][d],
                    &self.g[group][d],
                );
            }
        }
        v
    }

    /// `λ_max` of every assembled decrease block, with its indices.
    pub fn lmi_block_maxima(
        &self,
        problem: &SynthesisProblem,
        scripts: &ScriptMatrices,
    ) -> Vec<((usize, usize, usize), f64)> {
        let groups = self.groups();
        let mut out = Vec::new();
        for group in 0..groups {
            let output = problem.group_output(group);
            let next = (group + 1) % groups;
            for d in 0..self.depth() {
                for d_next in 0..self.depth() {
                    let block = decrease_block(
                        self.p[group][d].as_matrix(),
                        &self.x[group][d],
                        &self.g[group][d],
                        self.p[next][d_next].as_matrix(),
                        scripts.propagator(d),
                        &output,
                        problem.lambda,
                    );
                    out.push(((group, d, d_next), sym_lambda_max(&block)));
                }
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let doc = CertificateDoc {
            kind: "certificate".into(),
            mode: self.mode,
            lambda: Precise(self.lambda),
            period: Precise(self.period),
            max_dropouts: self.depth().saturating_sub(1),
            feasibility_margin: Precise(self.feasibility_margin),
            p: self
                .p
                .iter()
                .map(|row| row.iter().map(|s| MatrixDoc::from_matrix(s.as_matrix())).collect())
                .collect(),
            x: docs_from(&self.x),
            g: docs_from(&self.g),
        };
        serde_json::to_string_pretty(&doc).expect("certificate serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let doc: CertificateDoc = serde_json::from_str(text)?;
        let p = docs_to(&doc.p)?
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .map(SymmetricMatrix::new)
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ArtifactError::Shape(e.to_string()))?;
        let cert = Self {
            mode: doc.mode,
            lambda: doc.lambda.0,
            period: doc.period.0,
            p,
            x: docs_to(&doc.x)?,
            g: docs_to(&doc.g)?,
            feasibility_margin: doc.feasibility_margin.0,
        };
        let depth = doc.max_dropouts + 1;
        let groups = cert.p.len();
        let consistent = cert.x.len() == groups
            && cert.g.len() == groups
            && cert.p.iter().all(|r| r.len() == depth)
            && cert.x.iter().chain(&cert.g).all(|r| r.len() == depth);
        if !consistent || cert.p.is_empty() {
            return Err(ArtifactError::Shape("certificate tables are ragged".into()));
        }
        Ok(cert)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Matrix(#[from] MatrixDocError),
    #[error("{0}")]
    Shape(String),
}

#[derive(Serialize, Deserialize)]
struct CertificateDoc {
    kind: String,
    mode: SchedulingMode,
    lambda: Precise,
    period: Precise,
    max_dropouts: usize,
    feasibility_margin: Precise,
    p: Vec<Vec<MatrixDoc>>,
    x: Vec<Vec<MatrixDoc>>,
    g: Vec<Vec<MatrixDoc>>,
}

/// Observer gains `L_i^d`, indexed `[group][d]`. Round-robin gains are
/// `n×1` (one group per channel); concentrated gains are `n×p` in a single
/// group.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub mode: SchedulingMode,
    pub gains: Vec<Vec<Matrix>>,
}

#[derive(Serialize, Deserialize)]
struct GainDoc {
    kind: String,
    mode: SchedulingMode,
    states: usize,
    groups: usize,
    max_dropouts: usize,
    gains: Vec<Vec<MatrixDoc>>,
}

impl GainSchedule {
    /// All-zero schedule for the given shape.
    pub fn zeros(mode: SchedulingMode, states: usize, groups: usize, columns: usize, depth: usize) -> Self {
        Self {
            mode,
            gains: vec![vec![Matrix::zeros(states, columns); depth]; groups],
        }
    }

    pub fn groups(&self) -> usize {
        self.gains.len()
    }

    pub fn depth(&self) -> usize {
        self.gains.first().map_or(0, Vec::len)
    }

    pub fn max_dropouts(&self) -> usize {
        self.depth().saturating_sub(1)
    }

    pub fn gain(&self, group: usize, d: usize) -> &Matrix {
        &self.gains[group][d]
    }

    /// `ℒ_i^d`: vertical stack `L_i^0, …, L_i^d`.
    pub fn stacked(&self, group: usize, d: usize) -> Matrix {
        let blocks: Vec<&Matrix> = self.gains[group][..=d].iter().collect();
        vstack(&blocks)
    }

    pub fn to_json(&self) -> String {
        let doc = GainDoc {
            kind: "gain_schedule".into(),
            mode: self.mode,
            states: self.gains.first().and_then(|r| r.first()).map_or(0, |m| m.nrows()),
            groups: self.groups(),
            max_dropouts: self.max_dropouts(),
            gains: docs_from(&self.gains),
        };
        serde_json::to_string_pretty(&doc).expect("gain schedule serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ArtifactError> {
        let doc: GainDoc = serde_json::from_str(text)?;
        let gains = docs_to(&doc.gains)?;
        let ok = gains.len() == doc.groups
            && doc.groups > 0
            && gains.iter().all(|r| {
                r.len() == doc.max_dropouts + 1
                    && r.iter().all(|m| m.nrows() == doc.states && m.iter().all(|v| v.is_finite()))
            });
        if !ok {
            return Err(ArtifactError::Shape(
                "gain table does not match its header".into(),
            ));
        }
        Ok(Self { mode: doc.mode, gains })
    }
}

/// Recovers `L_i^0 = (X_i^0 Γ)⁻¹ G_i^0` and
/// `L_i^d = (X_i^d Γ)⁻¹ G_i^d − (𝒜_{d−1} … 𝒜_0)·ℒ_i^{d−1}`.
pub fn recover_gains(
    certificate: &Certificate,
    scripts: &ScriptMatrices,
    problem: &SynthesisProblem,
    condition_limit: f64,
) -> Result<GainSchedule, SynthError> {
    let depth = problem.max_dropouts + 1;
    if certificate.groups() != problem.groups() || certificate.depth() != depth {
        return Err(SynthError::Shape(format!(
            "certificate is {}x{}, problem needs {}x{}",
            certificate.groups(),
            certificate.depth(),
            problem.groups(),
            depth
        )));
    }
    let mut gains = Vec::with_capacity(problem.groups());
    for group in 0..problem.groups() {
        let mut row: Vec<Matrix> = Vec::with_capacity(depth);
        for d in 0..depth {
            let xg = &certificate.x[group][d] * &scripts.gamma;
            let sv = xg.singular_values();
            let smax = sv.max();
            let smin = sv.min();
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            if !(condition <= condition_limit) {
                return Err(SynthError::IllConditioned { group, d, condition });
            }
            let mut gain = xg
                .lu()
                .solve(&certificate.g[group][d])
                .ok_or(SynthError::IllConditioned {
                    group,
                    d,
                    condition,
                })?;
            if d > 0 {
                let prev: Vec<&Matrix> = row.iter().collect();
                gain -= scripts.chain(d) * vstack(&prev);
            }
            row.push(gain);
        }
        gains.push(row);
    }
    Ok(GainSchedule {
        mode: problem.mode,
        gains,
    })
}

/// `M_{i,d} = 𝒜_d − 𝒯_d ℒ_i^d c_i`: the error map over one inter-reception
/// interval with `d` dropouts, `c_i` being the group's output map.
pub fn closed_loop_matrix(
    scripts: &ScriptMatrices,
    gains: &GainSchedule,
    output: &Matrix,
    group: usize,
    d: usize,
) -> Matrix {
    scripts.propagator(d) - scripts.stack(d) * gains.stacked(group, d) * output
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub passed: bool,
    /// Largest eigenvalue over all `M_{i,d}ᵀ P_{next(i)}^{d'} M_{i,d} − P_i^d`.
    pub worst_lambda_max: f64,
    /// `(group, d, d')` attaining the worst value, 0-based.
    pub worst_case: (usize, usize, usize),
    pub decrease_checks: usize,
    /// Smallest eigenvalue over all `P_i^d`.
    pub min_p_eigenvalue: f64,
    /// Largest relative residual of `G_i^d = X_i^d 𝒯_d ℒ_i^d`.
    pub gain_identity_residual: f64,
}

impl VerificationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Solver-independent check of the Lyapunov decrease the LMIs encode.
pub fn verify_certificate(
    certificate: &Certificate,
    scripts: &ScriptMatrices,
    gains: &GainSchedule,
    problem: &SynthesisProblem,
) -> Result<VerificationReport, SynthError> {
    let groups = problem.groups();
    let depth = problem.max_dropouts + 1;
    if certificate.groups() != groups
        || certificate.depth() != depth
        || gains.groups() != groups
        || gains.depth() != depth
    {
        return Err(SynthError::Shape(
            "certificate, gains and problem disagree on table shape".into(),
        ));
    }
    let mut worst = f64::NEG_INFINITY;
    let mut worst_case = (0, 0, 0);
    let mut checks = 0;
    let mut residual: f64 = 0.0;
    for group in 0..groups {
        let output = problem.group_output(group);
        let next = (group + 1) % groups;
        for d in 0..depth {
            let m = closed_loop_matrix(scripts, gains, &output, group, d);
            let p = certificate.p[group][d].as_matrix();
            for d_next in 0..depth {
                let pn = certificate.p[next][d_next].as_matrix();
                let lam = sym_lambda_max(&(m.transpose() * pn * &m - p));
                checks += 1;
                if lam > worst {
                    worst = lam;
                    worst_case = (group, d, d_next);
                }
            }
            let g = &certificate.g[group][d];
            let rebuilt = &certificate.x[group][d] * scripts.stack(d) * gains.stacked(group, d);
            let scale = g.norm().max(f64::MIN_POSITIVE);
            residual = residual.max((rebuilt - g).norm() / scale);
        }
    }
    let min_p = certificate
        .p
        .iter()
        .flatten()
        .map(|p| p.lambda_min())
        .fold(f64::INFINITY, f64::min);
    Ok(VerificationReport {
        passed: worst < 0.0 && min_p > 0.0,
        worst_lambda_max: worst,
        worst_case,
        decrease_checks: checks,
        min_p_eigenvalue: min_p,
        gain_identity_residual: residual,
    })
}
