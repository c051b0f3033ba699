//! Block elimination for the barrier Newton system.
//!
//! Variables that occur in exactly the same set of LMI blocks form a
//! group. Groups picked so that no two share a block have a
//! block-diagonal Hessian among themselves, so they are eliminated first
//! and only the Schur complement on the remaining variables is factored
//! densely.

use std::collections::BTreeMap;

use faer::linalg::solvers::{Llt, Solve};
use faer::{Mat, Side};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Largest group eliminated as one dense block.
const MAX_GROUP: usize = 512;

#[derive(Debug, Clone)]
struct Group {
    vars: Vec<usize>,
    /// Positions in `kept` of the variables sharing a block with the group.
    coupled: Vec<usize>,
}

/// Which variables are eliminated and which are kept, fixed per system.
#[derive(Debug, Clone)]
pub(crate) struct Elimination {
    groups: Vec<Group>,
    kept: Vec<usize>,
}

impl Elimination {
    /// `block_vars[j]` lists the variables of block `j`; variable `dim − 1`
    /// is the margin variable present everywhere and is always kept.
    pub(crate) fn new(dim: usize, block_vars: &[Vec<usize>]) -> Self {
        let last = dim - 1;
        let mut membership: Vec<Vec<usize>> = vec![Vec::new(); last];
        for (j, vars) in block_vars.iter().enumerate() {
            for &k in vars {
                if k < last && membership[k].last() != Some(&j) {
                    membership[k].push(j);
                }
            }
        }
        let mut by_signature: BTreeMap<&[usize], Vec<usize>> = BTreeMap::new();
        for (k, sig) in membership.iter().enumerate() {
            by_signature.entry(sig.as_slice()).or_default().push(k);
        }
        let mut candidates: Vec<(&[usize], Vec<usize>)> = by_signature.into_iter().collect();
        candidates.sort_by_key(|(sig, vars)| (sig.len(), std::cmp::Reverse(vars.len()), vars[0]));

        let mut used = vec![false; block_vars.len()];
        let mut eliminated = vec![false; dim];
        let mut chosen = Vec::new();
        for (sig, vars) in candidates {
            if vars.len() > MAX_GROUP || sig.iter().any(|&j| used[j]) {
                continue;
            }
            for &j in sig {
                used[j] = true;
            }
            for &k in &vars {
                eliminated[k] = true;
            }
            chosen.push((sig, vars));
        }
        let kept: Vec<usize> = (0..dim).filter(|&k| !eliminated[k]).collect();
        let mut position = vec![usize::MAX; dim];
        for (i, &k) in kept.iter().enumerate() {
            position[k] = i;
        }
        let groups = chosen
            .into_iter()
            .map(|(sig, vars)| {
                let mut coupled: Vec<usize> = sig
                    .iter()
                    .flat_map(|&j| block_vars[j].iter().copied())
                    .chain(if sig.is_empty() { None } else { Some(last) })
                    .filter(|&k| !eliminated[k])
                    .map(|k| position[k])
                    .collect();
                coupled.sort_unstable();
                coupled.dedup();
                Group { vars, coupled }
            })
            .collect();
        Self { groups, kept }
    }

    /// Factors the symmetric positive definite `hess`.
    pub(crate) fn factor(&self, hess: &DMatrix<f64>) -> Option<Factorization<'_>> {
        let nk = self.kept.len();
        let mut schur = Mat::<f64>::from_fn(nk, nk, |i, j| hess[(self.kept[i], self.kept[j])]);
        let mut groups = Vec::with_capacity(self.groups.len());
        for group in &self.groups {
            let g = &group.vars;
            let h_gg = DMatrix::from_fn(g.len(), g.len(), |a, b| hess[(g[a], g[b])]);
            let chol = Cholesky::new(h_gg)?;
            let h_gc = DMatrix::from_fn(g.len(), group.coupled.len(), |a, c| {
                hess[(g[a], self.kept[group.coupled[c]])]
            });
            let solved = chol.solve(&h_gc);
            let update = h_gc.tr_mul(&solved);
            for (a, &ia) in group.coupled.iter().enumerate() {
                for (b, &ib) in group.coupled.iter().enumerate() {
                    schur[(ia, ib)] -= update[(a, b)];
                }
            }
            groups.push(GroupFactor { chol, h_gc, solved });
        }
        let llt = schur.llt(Side::Lower).ok()?;
        Some(Factorization {
            plan: self,
            groups,
            llt,
        })
    }
}

struct GroupFactor {
    chol: Cholesky<f64, Dyn>,
    h_gc: DMatrix<f64>,
    /// `H_gg⁻¹ H_gc`.
    solved: DMatrix<f64>,
}

pub(crate) struct Factorization<'a> {
    plan: &'a Elimination,
    groups: Vec<GroupFactor>,
    llt: Llt<f64>,
}

impl Factorization<'_> {
    pub(crate) fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let plan = self.plan;
        let mut reduced = Mat::<f64>::from_fn(plan.kept.len(), 1, |i, _| rhs[plan.kept[i]]);
        let mut partial = Vec::with_capacity(self.groups.len());
        for (group, f) in plan.groups.iter().zip(&self.groups) {
            let r_g = DVector::from_iterator(group.vars.len(), group.vars.iter().map(|&k| rhs[k]));
            let z = f.chol.solve(&r_g);
            let push = f.h_gc.tr_mul(&z);
            for (c, &ic) in group.coupled.iter().enumerate() {
                reduced[(ic, 0)] -= push[c];
            }
            partial.push(z);
        }
        let x_kept = self.llt.solve(&reduced);
        let mut out = DVector::zeros(rhs.len());
        for (i, &k) in plan.kept.iter().enumerate() {
            out[k] = x_kept[(i, 0)];
        }
        for ((group, f), z) in plan.groups.iter().zip(&self.groups).zip(partial) {
            let x_c = DVector::from_iterator(
                group.coupled.len(),
                group.coupled.iter().map(|&ic| x_kept[(ic, 0)]),
            );
            let x_g = z - &f.solved * x_c;
            for (a, &k) in group.vars.iter().enumerate() {
                out[k] = x_g[a];
            }
        }
        out
    }
}
