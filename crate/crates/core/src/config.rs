//! Experiment configuration files.
//!
//! ```json
//! {
//!   "plant": {
//!     "a": {"rows": 2, "cols": 2, "data": [0, 1, -1, 0]},
//!     "c": {"rows": 1, "cols": 2, "data": [1, 0]}
//!   },
//!   "sampling_period": 0.05,
//!   "max_dropouts": 2,
//!   "lambda": 20,
//!   "mode": "round_robin",
//!   "dropouts": {"seed": 7},
//!   "horizon": 10,
//!   "x0": [1, 0],
//!   "xhat0": [0, 0],
//!   "output_dir": "out"
//! }
//! ```
//!
//! `plant.b` (with `input`), `output_step`, `feasibility_margin` and `sweep`
//! are optional. Matrices are row-major with explicit dimensions.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::MatrixDoc;
use crate::linalg::{Matrix, Vector};
use crate::plant::{ModelError, PlantModel};
use crate::protocol::{generate_dropouts, DropoutPlan, SchedulingMode};
use crate::sim::{substeps_for, InputSignal};
use crate::synth::{SynthesisProblem, DEFAULT_FEASIBILITY_MARGIN};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Field path of the offending entry, if any.
    pub fn field_path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Read { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    pub a: MatrixDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<MatrixDoc>,
    pub c: MatrixDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Scalar(f64),
    Grid(Vec<f64>),
}

impl LambdaSpec {
    pub fn values(&self) -> Vec<f64> {
        match self {
            LambdaSpec::Scalar(v) => vec![*v],
            LambdaSpec::Grid(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DropoutSpec {
    /// Uniform counts on `{0..max_dropouts}` from a seeded generator.
    Seed(u64),
    /// Explicit per-reception counts.
    Scripted(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub periods: Vec<f64>,
    pub max_dropouts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub sampling_period: f64,
    pub max_dropouts: usize,
    pub lambda: LambdaSpec,
    #[serde(default = "default_mode")]
    pub mode: SchedulingMode,
    pub dropouts: DropoutSpec,
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub xhat0: Vec<f64>,
    pub output_dir: PathBuf,
    /// Spacing of trace rows; defaults to a tenth of the period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasibility_margin: Option<f64>,
    /// Piecewise-constant plant input, one vector per period.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn default_mode() -> SchedulingMode {
    SchedulingMode::RoundRobin
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            ConfigError::invalid(path, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks dimensions and ranges, reporting the offending field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let a = matrix_at(&self.plant.a, "plant.a")?;
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(ConfigError::invalid("plant.a", format!(
                "must be nonempty and square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let c = matrix_at(&self.plant.c, "plant.c")?;
        if c.ncols() != n || c.nrows() == 0 {
            return Err(ConfigError::invalid("plant.c", format!(
                "must have at least one row and {n} columns, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        let inputs = match &self.plant.b {
            Some(doc) => {
                let b = matrix_at(doc, "plant.b")?;
                if b.nrows() != n {
                    return Err(ConfigError::invalid("plant.b", format!(
                        "must have {n} rows, got {}",
                        b.nrows()
                    )));
                }
                b.ncols()
            }
            None => 0,
        };
        if let Err(ModelError::NonFinite(field)) = self.plant_model_unchecked() {
            return Err(ConfigError::invalid(format!("plant.{field}"), "entries must be finite"));
        }
        positive(self.sampling_period, "sampling_period")?;
        positive(self.horizon, "horizon")?;
        let lambdas = self.lambda.values();
        if lambdas.is_empty() {
            return Err(ConfigError::invalid("lambda", "grid must not be empty"));
        }
        for (i, &l) in lambdas.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                let path = match self.lambda {
                    LambdaSpec::Scalar(_) => "lambda".to_string(),
                    LambdaSpec::Grid(_) => format!("lambda[{i}]"),
                };
                return Err(ConfigError::invalid(path, "must be positive and finite"));
            }
        }
        for (field, v) in [("x0", &self.x0), ("xhat0", &self.xhat0)] {
            if v.len() != n {
                return Err(ConfigError::invalid(field, format!(
                    "must have {n} entries, got {}",
                    v.len()
                )));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(ConfigError::invalid(format!("{field}[{i}]"), "must be finite"));
            }
        }
        if let DropoutSpec::Scripted(counts) = &self.dropouts {
            if let Some(i) = counts.iter().position(|&d| d > self.max_dropouts) {
                return Err(ConfigError::invalid(
                    format!("dropouts.scripted[{i}]"),
                    format!("exceeds max_dropouts = {}", self.max_dropouts),
                ));
            }
        }
        if let Some(step) = self.output_step {
            if substeps_for(step, self.sampling_period).is_err() {
                return Err(ConfigError::invalid(
                    "output_step",
                    "must be positive and divide sampling_period",
                ));
            }
        }
        if let Some(m) = self.feasibility_margin {
            positive(m, "feasibility_margin")?;
        }
        if let Some(values) = &self.input {
            if inputs == 0 {
                return Err(ConfigError::invalid("input", "requires plant.b"));
            }
            for (k, u) in values.iter().enumerate() {
                if u.len() != inputs {
                    return Err(ConfigError::invalid(format!("input[{k}]"), format!(
                        "must have {inputs} entries, got {}",
                        u.len()
                    )));
                }
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.periods.is_empty() {
                return Err(ConfigError::invalid("sweep.periods", "must not be empty"));
            }
            if sweep.max_dropouts.is_empty() {
                return Err(ConfigError::invalid("sweep.max_dropouts", "must not be empty"));
            }
            for (i, &t) in sweep.periods.iter().enumerate() {
                positive(t, &format!("sweep.periods[{i}]"))?;
            }
        }
        Ok(())
    }

    fn plant_model_unchecked(&self) -> Result<PlantModel, ModelError> {
        let a = self.plant.a.to_matrix().expect("validated");
        let b = self.plant.b.as_ref().map(|b| b.to_matrix().expect("validated"));
        let c = self.plant.c.to_matrix().expect("validated");
        PlantModel::new(a, b, c)
    }

    pub fn plant(&self) -> PlantModel {
        self.plant_model_unchecked().expect("config validated")
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.lambda.values()
    }

    /// Synthesis problem for the first λ of the grid.
    pub fn problem(&self) -> SynthesisProblem {
        self.problem_for(self.sampling_period, self.max_dropouts, self.lambdas()[0])
    }

    pub fn problem_for(&self, period: f64, max_dropouts: usize, lambda: f64) -> SynthesisProblem {
        SynthesisProblem::new(self.plant(), period, max_dropouts, lambda, self.mode)
            .expect("config validated")
    }

    pub fn margin(&self) -> f64 {
        self.feasibility_margin.unwrap_or(DEFAULT_FEASIBILITY_MARGIN)
    }

    /// Number of sampling periods covering the horizon.
    pub fn periods(&self) -> usize {
        ((self.horizon / self.sampling_period) - 1e-9).ceil().max(0.0) as usize
    }

    /// Dropout plan for the run; `seed` overrides a configured seed.
    pub fn dropout_plan(&self, seed: Option<u64>) -> DropoutPlan {
        // every reception spends at least one period
        let count = self.periods() + 1;
        match (&self.dropouts, seed) {
            (_, Some(s)) | (&DropoutSpec::Seed(s), None) => generate_dropouts(self.max_dropouts, count, s),
            (DropoutSpec::Scripted(counts), None) => DropoutPlan::scripted(counts.clone()),
        }
    }

    pub fn substeps(&self) -> usize {
        match self.output_step {
            Some(step) => substeps_for(step, self.sampling_period).expect("config validated"),
            None => crate::sim::DEFAULT_SUBSTEPS,
        }
    }

    pub fn input_signal(&self) -> InputSignal {
        match &self.input {
            Some(values) => InputSignal::Held(values.iter().map(|u| Vector::from_vec(u.clone())).collect()),
            None => InputSignal::Zero,
        }
    }

    pub fn initial_states(&self) -> (Vector, Vector) {
        (Vector::from_vec(self.x0.clone()), Vector::from_vec(self.xhat0.clone()))
    }
}

fn matrix_at(doc: &MatrixDoc, path: &str) -> Result<Matrix, ConfigError> {
    doc.to_matrix()
        .map_err(|e| ConfigError::invalid(format!("{path}.data"), e.to_string()))
}

fn positive(v: f64, path: &str) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::invalid(path, "must be positive and finite"))
    }
}
