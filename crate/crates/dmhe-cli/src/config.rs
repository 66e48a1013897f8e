//! Experiment configuration: JSON schema, parsing, and validation.
//!
//! A configuration document fixes the plant, the offline data length, the
//! estimator tuning, the measurement-noise model, and the simulation run:
//!
//! ```text
//! {
//!   "system": {"preset": "paper-example"} | {"A": [[..]], "B": [[..]], "C": [[..]], "D": [[..]]},
//!   "N": 30, "L": 5, "rho": 1.0,
//!   "P": 10.0 | [[..]], "R": 10.0 | [[..]],
//!   "noise": {"kind": "gaussian", "mean": 0.0, "stddev": 2.0},
//!   "x0": [7.0, 7.0], "x_hat_0": [1.0, 2.0],
//!   "T_sim": 60, "seeds": [1], "state_box": {"lower": [..], "upper": [..]},
//!   "lambda": 0.9
//! }
//! ```
//!
//! Unknown keys are rejected. Scalar weights mean that multiple of the
//! identity. `state_box` entries may be `null` to leave a side unbounded.
//! Validation produces concrete `nalgebra` matrices and a checked
//! `MheConfig` before any computation runs.

use dmhe::estimator::{MheConfig, StateBox};
use dmhe::lti::{benchmark_system, LtiSystem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Plant description: a named preset or explicit matrices in row-major
/// nested lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSpec {
    Preset(PresetSpec),
    Matrices(MatrixSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetSpec {
    pub preset: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
}

/// Weight matrix given either as `w`, meaning `w * I`, or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: String,
    pub mean: f64,
    pub stddev: f64,
}

/// Componentwise state bounds; `null` leaves that side unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateBoxSpec {
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
}

fn default_t_sim() -> usize {
    60
}

fn default_seeds() -> Vec<u64> {
    vec![1]
}

fn default_lambda() -> f64 {
    0.9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(rename = "N")]
    pub n_data: usize,
    #[serde(rename = "L")]
    pub horizon: usize,
    pub rho: f64,
    #[serde(rename = "P")]
    pub p_weight: WeightSpec,
    #[serde(rename = "R")]
    pub r_weight: WeightSpec,
    pub noise: NoiseSpec,
    pub x0: Vec<f64>,
    pub x_hat_0: Vec<f64>,
    #[serde(rename = "T_sim", default = "default_t_sim")]
    pub t_sim: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state_box: Option<StateBoxSpec>,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
}

/// Configuration after validation: concrete system matrices and a checked
/// estimator tuning, ready to drive a run.
#[derive(Debug, Clone)]
pub struct ValidatedConfig {
    pub system: LtiSystem,
    pub n_data: usize,
    pub mhe: MheConfig,
    pub noise: NoiseSpec,
    pub x0: DVector<f64>,
    pub t_sim: usize,
    pub seeds: Vec<u64>,
    pub lambda: f64,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(invalid(format!("{name} must be a nonempty matrix")));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(invalid(format!(
                "{name} row {i} has {} entries, expected {ncols}",
                row.len()
            )));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{name} contains a non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn weight_matrix(name: &str, spec: &WeightSpec, dim: usize) -> Result<DMatrix<f64>, ConfigError> {
    match spec {
        WeightSpec::Scalar(w) => {
            if !(w.is_finite() && *w > 0.0) {
                return Err(invalid(format!("scalar weight {name} must be positive, got {w}")));
            }
            Ok(DMatrix::identity(dim, dim) * *w)
        }
        WeightSpec::Matrix(rows) => {
            let m = matrix_from_rows(name, rows)?;
            if m.nrows() != dim || m.ncols() != dim {
                return Err(invalid(format!(
                    "{name} must be {dim}x{dim}, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(m)
        }
    }
}

fn vector_from(name: &str, values: &[f64], dim: usize) -> Result<DVector<f64>, ConfigError> {
    if values.len() != dim {
        return Err(invalid(format!("{name} must have {dim} entries, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid(format!("{name} contains a non-finite entry")));
    }
    Ok(DVector::from_column_slice(values))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<ValidatedConfig, ConfigError> {
        let system = match &self.system {
            SystemSpec::Preset(p) => {
                if p.preset != "paper-example" {
                    return Err(invalid(format!(
                        "unknown system preset {:?}; available: \"paper-example\"",
                        p.preset
                    )));
                }
                benchmark_system()
            }
            SystemSpec::Matrices(m) => {
                let a = matrix_from_rows("A", &m.a)?;
                let b = matrix_from_rows("B", &m.b)?;
                let c = matrix_from_rows("C", &m.c)?;
                let d = matrix_from_rows("D", &m.d)?;
                LtiSystem::new(a, b, c, d).map_err(|e| invalid(format!("system: {e}")))?
            }
        };
        let n = system.state_dim();
        let p = system.output_dim();
        if self.n_data == 0 {
            return Err(invalid("N must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("L must be at least 1"));
        }
        if self.t_sim == 0 {
            return Err(invalid("T_sim must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must be nonempty"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid(format!("lambda must lie in (0, 1), got {}", self.lambda)));
        }
        if self.noise.kind != "gaussian" {
            return Err(invalid(format!(
                "unknown noise kind {:?}; available: \"gaussian\"",
                self.noise.kind
            )));
        }
        if !self.noise.mean.is_finite() || !self.noise.stddev.is_finite() || self.noise.stddev < 0.0 {
            return Err(invalid(format!(
                "noise mean/stddev must be finite with stddev >= 0, got mean {} stddev {}",
                self.noise.mean, self.noise.stddev
            )));
        }
        let p_weight = weight_matrix("P", &self.p_weight, n)?;
        let r_weight = weight_matrix("R", &self.r_weight, p)?;
        let x0 = vector_from("x0", &self.x0, n)?;
        let x_hat_0 = vector_from("x_hat_0", &self.x_hat_0, n)?;
        let state_box = match &self.state_box {
            None => None,
            Some(bx) => {
                if bx.lower.len() != n || bx.upper.len() != n {
                    return Err(invalid(format!(
                        "state_box sides must have {n} entries, got lower {} upper {}",
                        bx.lower.len(),
                        bx.upper.len()
                    )));
                }
                let lower =
                    DVector::from_iterator(n, bx.lower.iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)));
                let upper =
                    DVector::from_iterator(n, bx.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)));
                Some(StateBox { lower, upper })
            }
        };
        let mhe = MheConfig::new(self.horizon, self.rho, p_weight, r_weight, x_hat_0, state_box)
            .map_err(|e| invalid(format!("{e}")))?;
        Ok(ValidatedConfig {
            system,
            n_data: self.n_data,
            mhe,
            noise: self.noise.clone(),
            x0,
            t_sim: self.t_sim,
            seeds: self.seeds.clone(),
            lambda: self.lambda,
        })
    }
}

/// Configuration of the published benchmark experiment: the planar rotation
/// plant, 30 offline samples, horizon 5, prior discount 1, and the two
/// weight settings (a) `R = 10 I` and (b) `R = 100 I`, both with `P = 10 I`.
pub fn benchmark_config(setting_b: bool, stddev: f64) -> ExperimentConfig {
    ExperimentConfig {
        system: SystemSpec::Preset(PresetSpec { preset: "paper-example".into() }),
        n_data: 30,
        horizon: 5,
        rho: 1.0,
        p_weight: WeightSpec::Scalar(10.0),
        r_weight: WeightSpec::Scalar(if setting_b { 100.0 } else { 10.0 }),
        noise: NoiseSpec { kind: "gaussian".into(), mean: 0.0, stddev },
        x0: vec![7.0, 7.0],
        x_hat_0: vec![1.0, 2.0],
        t_sim: 60,
        seeds: vec![1],
        state_box: None,
        lambda: 0.9,
    }
}
