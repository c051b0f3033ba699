use std::collections::BTreeSet;

use crate::linalg::Matrix;

use super::{ScriptMatrices, SynthError, SynthesisProblem};

/// Position of the decision variables `(P, X, G)` for every
/// `(group, d)` pair inside the flat variable vector.
///
/// Per pair the layout is: the upper triangle of `P` (row-major), then `X`
/// row-major, then `G` row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarLayout {
    pub states: usize,
    pub gain_columns: usize,
    pub groups: usize,
    pub depth: usize,
}

impl VarLayout {
    pub fn for_problem(problem: &SynthesisProblem) -> Self {
        Self {
            states: problem.plant.states(),
            gain_columns: problem.gain_columns(),
            groups: problem.groups(),
            depth: problem.max_dropouts + 1,
        }
    }

    fn sym_len(&self) -> usize {
        self.states * (self.states + 1) / 2
    }

    fn per_pair(&self) -> usize {
        self.sym_len() + self.states * self.states + self.states * self.gain_columns
    }

    pub fn num_vars(&self) -> usize {
        self.groups * self.depth * self.per_pair()
    }

    fn base(&self, group: usize, d: usize) -> usize {
        (group * self.depth + d) * self.per_pair()
    }

    pub fn p_range(&self, group: usize, d: usize) -> std::ops::Range<usize> {
        let b = self.base(group, d);
        b..b + self.sym_len()
    }

    pub fn x_range(&self, group: usize, d: usize) -> std::ops::Range<usize> {
        let b = self.base(group, d) + self.sym_len();
        b..b + self.states * self.states
    }

    pub fn g_range(&self, group: usize, d: usize) -> std::ops::Range<usize> {
        let b = self.base(group, d) + self.sym_len() + self.states * self.states;
        b..b + self.states * self.gain_columns
    }

    pub fn p_matrix(&self, v: &[f64], group: usize, d: usize) -> Matrix {
        let base = self.p_range(group, d).start;
        let n = self.states;
        let mut m = Matrix::zeros(n, n);
        let mut k = base;
        for r in 0..n {
            for c in r..n {
                m[(r, c)] = v[k];
                m[(c, r)] = v[k];
                k += 1;
            }
        }
        m
    }

    pub fn x_matrix(&self, v: &[f64], group: usize, d: usize) -> Matrix {
        let n = self.states;
        Matrix::from_row_slice(n, n, &v[self.x_range(group, d)])
    }

    pub fn g_matrix(&self, v: &[f64], group: usize, d: usize) -> Matrix {
        Matrix::from_row_slice(self.states, self.gain_columns, &v[self.g_range(group, d)])
    }

    /// Writes `P`, `X`, `G` back into a variable vector.
    pub fn store(&self, v: &mut [f64], group: usize, d: usize, p: &Matrix, x: &Matrix, g: &Matrix) {
        let n = self.states;
        let mut k = self.p_range(group, d).start;
        for r in 0..n {
            for c in r..n {
                v[k] = p[(r, c)];
                k += 1;
            }
        }
        let xr = self.x_range(group, d);
        for (slot, val) in v[xr].iter_mut().zip(x.transpose().iter()) {
            *slot = *val;
        }
        let gr = self.g_range(group, d);
        for (slot, val) in v[gr].iter_mut().zip(g.transpose().iter()) {
            *slot = *val;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmiKind {
    /// Lyapunov decrease from `(group, d)` to `(next group, d_next)`.
    Decrease { group: usize, d: usize, d_next: usize },
    /// `P_group^d ≻ 0`, stated as `−P ≺ 0`.
    Positivity { group: usize, d: usize },
    Other,
}

/// Symmetric affine constraint `F(v) = F₀ + Σ v_k F_k ≺ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLmi {
    pub kind: LmiKind,
    pub constant: Matrix,
    pub terms: Vec<(usize, Matrix)>,
}

impl AffineLmi {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, v: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (k, f) in &self.terms {
            out += f * v[*k];
        }
        out
    }
}

/// Linear equality `Σ coeff·v_k = rhs` fixing the scale of a homogeneous
/// system.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiSystem {
    pub num_vars: usize,
    pub lmis: Vec<AffineLmi>,
    pub normalization: Option<Normalization>,
}

impl LmiSystem {
    pub fn is_homogeneous(&self) -> bool {
        self.lmis
            .iter()
            .all(|l| l.constant.iter().all(|&x| x == 0.0))
    }

    /// `min_j −λ_max(F_j(v))`; positive iff every constraint holds strictly.
    pub fn margin(&self, v: &[f64]) -> f64 {
        self.lmis
            .iter()
            .map(|l| -crate::linalg::sym_lambda_max(&l.evaluate(v)))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone)]
pub struct AssembledLmis {
    pub layout: VarLayout,
    pub system: LmiSystem,
}

impl AssembledLmis {
    pub fn decrease_count(&self) -> usize {
        self.system
            .lmis
            .iter()
            .filter(|l| matches!(l.kind, LmiKind::Decrease { .. }))
            .count()
    }

    pub fn positivity_count(&self) -> usize {
        self.system
            .lmis
            .iter()
            .filter(|l| matches!(l.kind, LmiKind::Positivity { .. }))
            .count()
    }
}

/// The `2n×2n` decrease block
///
/// ```text
/// [ −P + He(X𝒜_d − G c)        *                 ]
/// [ −Xᵀ + λ(X𝒜_d − G c)      P_next − λ He(X)     ]
/// ```
pub(crate) fn decrease_block(
    p_cur: &Matrix,
    x: &Matrix,
    g: &Matrix,
    p_next: &Matrix,
    propagator: &Matrix,
    output: &Matrix,
    lambda: f64,
) -> Matrix {
    let n = p_cur.nrows();
    let k = x * propagator - g * output;
    let ul = -p_cur + &k + k.transpose();
    let ll = -x.transpose() + &k * lambda;
    let lr = p_next - (x + x.transpose()) * lambda;
    let mut out = Matrix::zeros(2 * n, 2 * n);
    out.view_mut((0, 0), (n, n)).copy_from(&ul);
    out.view_mut((n, 0), (n, n)).copy_from(&ll);
    out.view_mut((0, n), (n, n)).copy_from(&ll.transpose());
    out.view_mut((n, n), (n, n)).copy_from(&lr);
    out
}

/// Builds the full constraint family: for every group `i`, every `d` and
/// every `d'`, one decrease block coupling `P_i^d` to `P_{next(i)}^{d'}`
/// (with `next(p) = 1`), plus positivity of every `P_i^d`.
///
/// The decrease blocks are homogeneous in `(P, X, G)`, so positivity is
/// stated as `P_i^d ≻ I`, which fixes the scale without losing solutions.
/// With this normalization an infeasible family has a strictly negative
/// optimal margin.
pub fn assemble_lmis(
    problem: &SynthesisProblem,
    scripts: &ScriptMatrices,
) -> Result<AssembledLmis, SynthError> {
    problem.validate()?;
    let layout = VarLayout::for_problem(problem);
    let n = layout.states;
    if scripts.states() != n || scripts.max_dropouts() != problem.max_dropouts {
        return Err(SynthError::Shape(
            "script matrices built for a different plant or dropout bound".into(),
        ));
    }
    let mut lmis = Vec::new();
    let mut scratch = vec![0.0; layout.num_vars()];
    for group in 0..layout.groups {
        let output = problem.group_output(group);
        let next = (group + 1) % layout.groups;
        for d in 0..layout.depth {
            for d_next in 0..layout.depth {
                let vars: BTreeSet<usize> = layout
                    .p_range(group, d)
                    .chain(layout.x_range(group, d))
                    .chain(layout.g_range(group, d))
                    .chain(layout.p_range(next, d_next))
                    .collect();
                let terms = vars
                    .into_iter()
                    .map(|k| {
                        scratch[k] = 1.0;
                        let block = decrease_block(
                            &layout.p_matrix(&scratch, group, d),
                            &layout.x_matrix(&scratch, group, d),
                            &layout.g_matrix(&scratch, group, d),
                            &layout.p_matrix(&scratch, next, d_next),
                            scripts.propagator(d),
                            &output,
                            problem.lambda,
                        );
                        scratch[k] = 0.0;
                        (k, block)
                    })
                    .collect();
                lmis.push(AffineLmi {
                    kind: LmiKind::Decrease { group, d, d_next },
                    constant: Matrix::zeros(2 * n, 2 * n),
                    terms,
                });
            }
        }
    }
    for group in 0..layout.groups {
        for d in 0..layout.depth {
            let terms = layout
                .p_range(group, d)
                .map(|k| {
                    scratch[k] = 1.0;
                    let block = -layout.p_matrix(&scratch, group, d);
                    scratch[k] = 0.0;
                    (k, block)
                })
                .collect();
            lmis.push(AffineLmi {
                kind: LmiKind::Positivity { group, d },
                constant: Matrix::identity(n, n),
                terms,
            });
        }
    }
    Ok(AssembledLmis {
        layout,
        system: LmiSystem {
            num_vars: layout.num_vars(),
            lmis,
            normalization: None,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::plant::PlantModel;
    use crate::protocol::SchedulingMode;
    use crate::synth::build_script_matrices;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plant(outputs: usize) -> PlantModel {
        let a = from_rows(
            4,
            4,
            &[
                0.05, -0.59, 1.04, 2.14, 0.57, -0.26, -0.26, -0.62, -1.05, 1.36, -0.62, 1.51, -1.48,
                -1.01, -0.35, 0.09,
            ],
        );
        let c = Matrix::identity(4, 4).rows(0, outputs).into_owned();
        PlantModel::new(a, None, c).unwrap()
    }

    fn assemble(plant: PlantModel, dbar: usize, mode: SchedulingMode) -> AssembledLmis {
        let problem = SynthesisProblem::new(plant, 0.02, dbar, 20.0, mode).unwrap();
        let scripts = build_script_matrices(&problem.plant, 0.02, dbar).unwrap();
        assemble_lmis(&problem, &scripts).unwrap()
    }

    fn random_values(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0)
            .collect()
    }

    #[test]
    fn constraint_counts() {
        let a = assemble(plant(2), 0, SchedulingMode::RoundRobin);
        assert_eq!((a.decrease_count(), a.positivity_count()), (2, 2));
        let a = assemble(plant(2), 4, SchedulingMode::RoundRobin);
        assert_eq!((a.decrease_count(), a.positivity_count()), (50, 10));
        let a = assemble(plant(1), 3, SchedulingMode::RoundRobin);
        assert_eq!((a.decrease_count(), a.positivity_count()), (16, 4));
        let a = assemble(plant(2), 2, SchedulingMode::Concentrated);
        assert_eq!((a.decrease_count(), a.positivity_count()), (9, 3));
    }

    #[test]
    fn affine_form_reproduces_direct_blocks() {
        let assembled = assemble(plant(2), 2, SchedulingMode::RoundRobin);
        let layout = assembled.layout;
        let problem = SynthesisProblem::new(plant(2), 0.02, 2, 20.0, SchedulingMode::RoundRobin).unwrap();
        let scripts = build_script_matrices(&problem.plant, 0.02, 2).unwrap();
        let v = random_values(layout.num_vars(), 3);
        let doubled: Vec<f64> = v.iter().map(|x| 2.0 * x).collect();
        for lmi in &assembled.system.lmis {
            if let LmiKind::Decrease { group, d, d_next } = lmi.kind {
                let next = (group + 1) % layout.groups;
                let direct = decrease_block(
                    &layout.p_matrix(&v, group, d),
                    &layout.x_matrix(&v, group, d),
                    &layout.g_matrix(&v, group, d),
                    &layout.p_matrix(&v, next, d_next),
                    scripts.propagator(d),
                    &problem.group_output(group),
                    20.0,
                );
                let got = lmi.evaluate(&v);
                assert!((&got - &direct).norm() < 1e-12 * direct.norm());
                assert!((lmi.evaluate(&doubled) - got * 2.0).norm() < 1e-12 * direct.norm());
            }
        }
    }

    #[test]
    fn positivity_reads_p_above_identity() {
        let assembled = assemble(plant(1), 0, SchedulingMode::RoundRobin);
        let layout = assembled.layout;
        let mut v = vec![0.0; layout.num_vars()];
        let p = Matrix::identity(4, 4) * 3.0;
        layout.store(&mut v, 0, 0, &p, &Matrix::zeros(4, 4), &Matrix::zeros(4, 1));
        let lmi = assembled
            .system
            .lmis
            .iter()
            .find(|l| matches!(l.kind, LmiKind::Positivity { .. }))
            .unwrap();
        assert!((lmi.evaluate(&v) + Matrix::identity(4, 4) * 2.0).norm() < 1e-15);
    }

    #[test]
    fn single_output_modes_coincide() {
        let rr = assemble(plant(1), 2, SchedulingMode::RoundRobin);
        let conc = assemble(plant(1), 2, SchedulingMode::Concentrated);
        assert_eq!(rr.layout, conc.layout);
        assert_eq!(rr.system.lmis.len(), conc.system.lmis.len());
        for (a, b) in rr.system.lmis.iter().zip(&conc.system.lmis) {
            assert_eq!(a.constant, b.constant);
            assert_eq!(a.terms, b.terms);
        }
    }

    #[test]
    fn layout_round_trips_blocks() {
        let assembled = assemble(plant(2), 1, SchedulingMode::RoundRobin);
        let layout = assembled.layout;
        let mut v = vec![0.0; layout.num_vars()];
        let raw = random_values(16, 9);
        let x = Matrix::from_row_slice(4, 4, &raw);
        let p = &x * x.transpose();
        let g = Matrix::from_row_slice(4, 1, &raw[..4]);
        layout.store(&mut v, 1, 1, &p, &x, &g);
        assert_eq!(layout.p_matrix(&v, 1, 1), p);
        assert_eq!(layout.x_matrix(&v, 1, 1), x);
        assert_eq!(layout.g_matrix(&v, 1, 1), g);
        assert!(layout.p_matrix(&v, 0, 1).iter().all(|&e| e == 0.0));
    }
}
