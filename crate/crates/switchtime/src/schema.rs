//! JSON problem files.
//!
//! A problem file carries the raw (pre-augmentation) system: the mode list
//! (dense `A` matrices or named builtin nonlinear modes with parameters),
//! initial state, cost weights, horizon, grid size, optional duration bounds
//! and an optional tracking reference. [`ProblemFile::to_problem`] applies
//! the reference augmentation and returns the solver-ready problem.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::benchmarks::{double_tank_mode, lotka_volterra_mode};
use crate::error::{Error, Result};
use crate::problem::{augment_problem, ModeDynamics, ReferenceSignal, SwitchedProblem};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LotkaVolterraParams {
    pub c1: f64,
    pub c2: f64,
    pub u: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DoubleTankParams {
    pub u: f64,
}

/// One mode: a dense matrix or a named builtin vector field.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModeSpec {
    Linear {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
    },
    LotkaVolterra {
        lotka_volterra: LotkaVolterraParams,
    },
    DoubleTank {
        double_tank: DoubleTankParams,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub r0: Vec<f64>,
    pub rdot: Vec<f64>,
    pub tracked: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n_x: usize,
    pub modes: Vec<ModeSpec>,
    pub x0: Vec<f64>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "E")]
    pub e: Vec<Vec<f64>>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub n_grid: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lb: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ub: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSpec>,
}

fn matrix_from_rows(rows: &[Vec<f64>], n: usize, field: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n {
        return Err(Error::InvalidProblem(format!(
            "{field}: expected {n} rows, got {}",
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidProblem(format!(
                "{field}[{i}]: expected {n} columns, got {}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl ProblemFile {
    /// Parse a problem file, reporting the JSON path of any violation.
    pub fn from_json_str(text: &str) -> Result<ProblemFile> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|err| {
            Error::InvalidProblem(format!("{}: {}", err.path(), err.inner()))
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files are always serializable")
    }

    /// Build the solver-ready problem, applying the reference augmentation.
    pub fn to_problem(&self) -> Result<SwitchedProblem> {
        let n = self.n_x;
        if n == 0 {
            return Err(Error::InvalidProblem("n_x: must be at least 1".into()));
        }
        if self.x0.len() != n {
            return Err(Error::InvalidProblem(format!(
                "x0: expected length {n}, got {}",
                self.x0.len()
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::InvalidProblem("modes: at least one required".into()));
        }
        let q = matrix_from_rows(&self.q, n, "Q")?;
        let e = matrix_from_rows(&self.e, n, "E")?;

        let mut modes = Vec::with_capacity(self.modes.len());
        for (i, spec) in self.modes.iter().enumerate() {
            let mode = match spec {
                ModeSpec::Linear { a } => {
                    let m = matrix_from_rows(a, n, &format!("modes[{i}].A"))?;
                    ModeDynamics::linear(m)?
                }
                ModeSpec::LotkaVolterra { lotka_volterra } => {
                    if n != 2 {
                        return Err(Error::InvalidProblem(format!(
                            "modes[{i}].lotka_volterra: requires n_x = 2, got {n}"
                        )));
                    }
                    lotka_volterra_mode(lotka_volterra.c1, lotka_volterra.c2, lotka_volterra.u)
                }
                ModeSpec::DoubleTank { double_tank } => {
                    if n != 2 {
                        return Err(Error::InvalidProblem(format!(
                            "modes[{i}].double_tank: requires n_x = 2, got {n}"
                        )));
                    }
                    double_tank_mode(double_tank.u)
                }
            };
            modes.push(mode);
        }

        let mut problem = SwitchedProblem::new(
            modes,
            DVector::from_vec(self.x0.clone()),
            q,
            e,
            self.horizon,
            self.n_grid,
        )?;

        if self.lb.is_some() || self.ub.is_some() {
            let count = self.modes.len();
            let lb = match &self.lb {
                Some(v) if v.len() != count => {
                    return Err(Error::InvalidProblem(format!(
                        "lb: expected length {count}, got {}",
                        v.len()
                    )))
                }
                Some(v) => DVector::from_vec(v.clone()),
                None => DVector::zeros(count),
            };
            let ub = match &self.ub {
                Some(v) if v.len() != count => {
                    return Err(Error::InvalidProblem(format!(
                        "ub: expected length {count}, got {}",
                        v.len()
                    )))
                }
                Some(v) => DVector::from_vec(v.clone()),
                None => DVector::from_element(count, f64::INFINITY),
            };
            problem = problem.with_bounds(lb, ub)?;
        }

        match &self.reference {
            Some(r) => {
                let signal = ReferenceSignal {
                    r0: DVector::from_vec(r.r0.clone()),
                    rdot: DVector::from_vec(r.rdot.clone()),
                    tracked: r.tracked.clone(),
                };
                augment_problem(&problem, Some(&signal))
            }
            None => Ok(problem),
        }
    }
}
