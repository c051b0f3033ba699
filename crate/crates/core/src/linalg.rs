//! Dense linear algebra primitives: matrix exponential, the exponential
//! integral `∫₀ᵗ e^{Mτ} dτ`, spectra and definiteness tests.
//!
//! Everything here is a pure function over borrowed inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use thiserror::Error;

/// Dense real matrix.
pub type Matrix = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Absolute tolerance used when symmetrizing.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative accuracy contract of [`mat_exp`] against a long Taylor series.
pub const EXPM_REL_TOL: f64 = 1e-12;
/// Tolerance of the semigroup and integral identities.
pub const IDENTITY_TOL: f64 = 1e-10;
/// Eigenpair residual tolerance.
pub const EIG_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("integration horizon must be nonnegative, got {0}")]
    NegativeTime(f64),
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("empty matrix")]
    Empty,
}

fn ensure_square(m: &Matrix) -> Result<usize, LinalgError> {
    if m.nrows() == 0 {
        return Err(LinalgError::Empty);
    }
    if m.nrows() != m.ncols() {
        return Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// Symmetric matrix. Construction symmetrizes `(S + Sᵀ)/2`, so the stored
/// entries are exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix(Matrix);

impl SymmetricMatrix {
    pub fn new(m: Matrix) -> Result<Self, LinalgError> {
        ensure_square(&m)?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let sym = (&m + m.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn lambda_max(&self) -> f64 {
        *self.eigenvalues().last().expect("nonempty")
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn sym_lambda_max(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// True iff `λ_max(S) < −margin`.
pub fn is_negative_definite(s: &SymmetricMatrix, margin: f64) -> bool {
    s.lambda_max() < -margin
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

fn one_norm(m: &Matrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

// Padé [m/m] numerators for the exponential, lowest degree first.
const PADE3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE7: [f64; 8] = [
    17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0,
];
const PADE9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

// 1-norm thresholds below which the corresponding Padé degree reaches
// unit-roundoff backward error (Higham 2005).
const THETA: [(usize, f64); 4] = [
    (3, 1.495585217958292e-2),
    (5, 2.539398330063230e-1),
    (7, 9.504178996162932e-1),
    (9, 2.097847961257068e0),
];
const THETA13: f64 = 5.371920351148152;

fn pade_low(a: &Matrix, coeffs: &[f64]) -> (Matrix, Matrix) {
    let n = a.nrows();
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let mut powers = vec![id.clone(), a2.clone()];
    for _ in 2..coeffs.len() / 2 {
        let next = powers.last().unwrap() * &a2;
        powers.push(next);
    }
    let mut u = Matrix::zeros(n, n);
    let mut v = Matrix::zeros(n, n);
    for (k, pow) in powers.iter().enumerate() {
        v += pow * coeffs[2 * k];
        u += pow * coeffs[2 * k + 1];
    }
    (a * u, v)
}

fn pade13(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.nrows();
    let b = &PADE13;
    let id = Matrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

fn expm(a: &Matrix) -> Matrix {
    let norm = one_norm(a);
    for &(deg, theta) in THETA.iter() {
        if norm <= theta {
            let coeffs: &[f64] = match deg {
                3 => &PADE3,
                5 => &PADE5,
                7 => &PADE7,
                _ => &PADE9,
            };
            let (u, v) = pade_low(a, coeffs);
            return pade_solve(&u, &v);
        }
    }
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);
    let (u, v) = pade13(&scaled);
    let mut r = pade_solve(&u, &v);
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

fn pade_solve(u: &Matrix, v: &Matrix) -> Matrix {
    let p = v + u;
    let q = v - u;
    q.lu()
        .solve(&p)
        .expect("Padé denominator is nonsingular within the degree thresholds")
}

/// `e^{M t}` by scaling and squaring with a Padé kernel.
pub fn mat_exp(m: &Matrix, t: f64) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    if !t.is_finite() || m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(expm(&(m * t)))
}

/// `Γ(t) = ∫₀ᵗ e^{Mτ} dτ`, read off the upper-right block of
/// `exp([[M, I], [0, 0]]·t)`. Never inverts `M`, so singular `M` is fine.
pub fn exp_integral(m: &Matrix, t: f64) -> Result<Matrix, LinalgError> {
    let n = ensure_square(m)?;
    if t < 0.0 {
        return Err(LinalgError::NegativeTime(t));
    }
    if t == 0.0 {
        return Ok(Matrix::zeros(n, n));
    }
    let (_, gamma) = exp_and_integral(m, t)?;
    Ok(gamma)
}

/// `(e^{Mt}, ∫₀ᵗ e^{Mτ}dτ)` from one augmented exponential.
pub fn exp_and_integral(m: &Matrix, t: f64) -> Result<(Matrix, Matrix), LinalgError> {
    let n = ensure_square(m)?;
    if t < 0.0 {
        return Err(LinalgError::NegativeTime(t));
    }
    let mut aug = Matrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(m);
    aug.view_mut((0, n), (n, n)).fill_with_identity();
    let e = mat_exp(&aug, t)?;
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, n)).into_owned(),
    ))
}

/// All eigenvalues with multiplicity, unordered.
pub fn eig_spectrum(m: &Matrix) -> Result<Vec<Complex64>, LinalgError> {
    ensure_square(m)?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(eig_spectrum(m)?
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Horizontal block concatenation of equally tall matrices.
pub fn hstack(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(*b);
        c0 += b.ncols();
    }
    out
}

/// Vertical block concatenation of equally wide matrices.
pub fn vstack(blocks: &[&Matrix]) -> Matrix {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        out.view_mut((r0, 0), (b.nrows(), cols)).copy_from(*b);
        r0 += b.nrows();
    }
    out
}

/// Build a matrix from row-major data.
pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, cols, data)
}
