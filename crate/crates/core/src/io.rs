//! JSON matrix documents and number formatting shared by the artifacts.
//!
//! Matrices are written as `{"rows": r, "cols": c, "data": [...]}` with the
//! data row-major. Every floating-point value is printed with 17 significant
//! digits so files reload bit-exactly.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::Matrix;

/// `x` with 17 significant digits in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes an `f64` as a JSON number with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precise(pub f64);

impl Serialize for Precise {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite value"));
        }
        let raw = serde_json::value::RawValue::from_string(fmt_f64(self.0))
            .map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Precise {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        f64::deserialize(deserializer).map(Precise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Precise>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("matrix declared {rows}x{cols} but carries {len} entries")]
pub struct MatrixDocError {
    pub rows: usize,
    pub cols: usize,
    pub len: usize,
}

impl MatrixDoc {
    pub fn from_matrix(m: &Matrix) -> Self {
        let data = m.transpose().iter().map(|&x| Precise(x)).collect();
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<Matrix, MatrixDocError> {
        if self.rows * self.cols != self.data.len() {
            return Err(MatrixDocError {
                rows: self.rows,
                cols: self.cols,
                len: self.data.len(),
            });
        }
        let raw: Vec<f64> = self.data.iter().map(|p| p.0).collect();
        Ok(Matrix::from_row_slice(self.rows, self.cols, &raw))
    }
}

pub(crate) fn docs_from(table: &[Vec<Matrix>]) -> Vec<Vec<MatrixDoc>> {
    table
        .iter()
        .map(|row| row.iter().map(MatrixDoc::from_matrix).collect())
        .collect()
}

pub(crate) fn docs_to(table: &[Vec<MatrixDoc>]) -> Result<Vec<Vec<Matrix>>, MatrixDocError> {
    table
        .iter()
        .map(|row| row.iter().map(MatrixDoc::to_matrix).collect())
        .collect()
}
