use thiserror::Error;

use crate::linalg::Matrix;
use crate::protocol::SchedulingMode;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field}: expected {expected}, got {got}")]
    Dimension {
        field: &'static str,
        expected: String,
        got: String,
    },
    #[error("{0}: entries must be finite")]
    NonFinite(&'static str),
}

/// Continuous-time LTI plant `ẋ = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: Matrix,
    b: Matrix,
    c: Matrix,
}

fn dims(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

impl PlantModel {
    /// `b = None` means the plant has no input.
    pub fn new(a: Matrix, b: Option<Matrix>, c: Matrix) -> Result<Self, ModelError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(ModelError::Dimension {
                field: "a",
                expected: "nonempty square".into(),
                got: dims(&a),
            });
        }
        let b = b.unwrap_or_else(|| Matrix::zeros(n, 0));
        if b.nrows() != n {
            return Err(ModelError::Dimension {
                field: "b",
                expected: format!("{n} rows"),
                got: dims(&b),
            });
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(ModelError::Dimension {
                field: "c",
                expected: format!("at least one row and {n} columns"),
                got: dims(&c),
            });
        }
        for (name, m) in [("a", &a), ("b", &b), ("c", &c)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    /// Row `c_i` of the output map, 0-based.
    pub fn output_row(&self, i: usize) -> Matrix {
        self.c.rows(i, 1).into_owned()
    }

    /// Output map seen by channel group `group` (0-based): `c_i` in
    /// round-robin mode, the whole `C` in concentrated mode.
    pub fn group_output(&self, mode: SchedulingMode, group: usize) -> Matrix {
        match mode {
            SchedulingMode::RoundRobin => self.output_row(group),
            SchedulingMode::Concentrated => self.c.clone(),
        }
    }
}
