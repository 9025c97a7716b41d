use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum AssignMode {
    /// Independent Bernoulli(p) draws.
    Randomized { p: f64 },
    /// Bernoulli(sigmoid(w·x)) with a random direction w.
    Observational,
}

/// Treated-fraction window the observational mechanism is redrawn into.
pub const OBS_FRACTION: (f64, f64) = (0.2, 0.8);
const OBS_MAX_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub t: Vec<f64>,
    /// True propensity P(T_i = 1 | X_i).
    pub propensity: Vec<f64>,
}

pub fn assign_treatment<R: Rng + ?Sized>(mode: AssignMode, x: &Matrix<f64>, rng: &mut R) -> Result<Assignment> {
    let n = x.rows();
    match mode {
        AssignMode::Randomized { p } => {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("treatment probability must lie in (0, 1), got {p}")));
            }
            let t = (0..n).map(|_| f64::from(rng.random_bool(p))).collect();
            Ok(Assignment { t, propensity: vec![p; n] })
        }
        AssignMode::Observational => {
            let d = x.cols();
            if d == 0 {
                return Err(Error::invalid("observational assignment needs covariates"));
            }
            for _ in 0..OBS_MAX_DRAWS {
                let mut w: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                w.iter_mut().for_each(|v| *v /= norm);
                let propensity: Vec<f64> = (0..n)
                    .map(|i| {
                        let z: f64 = x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum();
                        1.0 / (1.0 + (-z).exp())
                    })
                    .collect();
                let t: Vec<f64> = propensity.iter().map(|&q| f64::from(rng.random_bool(q))).collect();
                let frac = t.iter().sum::<f64>() / n.max(1) as f64;
                if (OBS_FRACTION.0..=OBS_FRACTION.1).contains(&frac) {
                    return Ok(Assignment { t, propensity });
                }
            }
            Err(Error::invalid("could not draw an observational assignment with treated fraction in [0.2, 0.8]"))
        }
    }
}
