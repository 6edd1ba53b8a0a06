//! Finite-difference gradient checking.
//!
//! The oracle is a central difference with step h = 1e-5 and a relative
//! error metric floored at 1e-8. It re-evaluates the recorded function from
//! scratch at perturbed leaf values, so it stays independent of the VJP
//! rules it is judging.

use crate::error::AdError;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// One checkable case: a name, the leaf values, and a builder that records
/// a scalar loss over those leaves.
pub struct CheckCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    #[allow(clippy::type_complexity)]
    pub build: Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AdError>>,
}

impl CheckCase {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        build: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AdError> + 'static,
    ) -> Self {
        CheckCase {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub primitive: String,
    pub max_rel_err: f64,
    pub pass: bool,
}

impl CheckReport {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "primitive": self.primitive,
            "max_rel_err": self.max_rel_err,
            "pass": self.pass,
        })
    }
}

fn eval(case: &CheckCase, values: &[Tensor]) -> Result<f64, AdError> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = values
        .iter()
        .enumerate()
        .map(|(i, v)| tape.param(i, v))
        .collect();
    let loss = (case.build)(&tape, &vars)?;
    Ok(loss.value().item().map_err(AdError::Tensor)?)
}

/// Runs one case: analytic gradients via `backward`, numeric gradients via
/// central differences, reporting the worst relative disagreement.
pub fn run_check(case: &CheckCase, tol: f64, step: f64) -> CheckReport {
    let analytic = (|| -> Result<Vec<Tensor>, AdError> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = case
            .inputs
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(i, v))
            .collect();
        let loss = (case.build)(&tape, &vars)?;
        let store = tape.backward(loss)?;
        Ok((0..case.inputs.len())
            .map(|i| store.get(i).cloned().expect("param registered"))
            .collect())
    })();

    let analytic = match analytic {
        Ok(g) => g,
        Err(_) => {
            return CheckReport {
                primitive: case.name.clone(),
                max_rel_err: f64::INFINITY,
                pass: false,
            }
        }
    };

    let mut max_rel = 0.0f64;
    let mut values: Vec<Tensor> = case.inputs.clone();
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + step;
            let up = eval(case, &values);
            values[i].data_mut()[j] = orig - step;
            let down = eval(case, &values);
            values[i].data_mut()[j] = orig;
            let (up, down) = match (up, down) {
                (Ok(u), Ok(d)) => (u, d),
                _ => {
                    return CheckReport {
                        primitive: case.name.clone(),
                        max_rel_err: f64::INFINITY,
                        pass: false,
                    }
                }
            };
            let numeric = (up - down) / (2.0 * step);
            let exact = analytic[i].data()[j];
            if numeric.is_nan() || exact.is_nan() {
                return CheckReport {
                    primitive: case.name.clone(),
                    max_rel_err: f64::NAN,
                    pass: false,
                };
            }
            let rel = (numeric - exact).abs() / exact.abs().max(numeric.abs()).max(ABS_FLOOR);
            max_rel = max_rel.max(rel);
        }
    }
    CheckReport {
        primitive: case.name.clone(),
        max_rel_err: max_rel,
        pass: max_rel <= tol,
    }
}

/// Runs a batch of cases at a shared tolerance.
pub fn run_all(cases: &[CheckCase], tol: f64) -> Vec<CheckReport> {
    cases
        .iter()
        .map(|case| run_check(case, tol, DEFAULT_STEP))
        .collect()
}
