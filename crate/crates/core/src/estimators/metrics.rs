use serde::{Deserialize, Serialize};

use super::model::EstimatorModel;
use crate::error::{Error, Result};
use crate::synthgen::{Dataset, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Root mean squared outcome error.
    pub rmse: f64,
    /// Mean squared ITE error (not rooted); absent without ground truth.
    pub pehe: Option<f64>,
}

/// Outcome and effect errors over `rows`. All inputs must share units.
pub fn metrics(yhat: &[f64], y: &[f64], tau_hat: &[f64], tau: Option<&[f64]>, rows: &[usize]) -> Result<Metrics> {
    if rows.is_empty() {
        return Err(Error::invalid("metrics over an empty row set"));
    }
    let m = rows.len() as f64;
    let mut se = 0.0;
    for &i in rows {
        let d = y[i] - yhat[i];
        if !d.is_finite() {
            return Err(Error::invalid(format!("outcome or prediction missing at node {i}")));
        }
        se += d * d;
    }
    let pehe = tau.map(|tau| rows.iter().map(|&i| (tau[i] - tau_hat[i]).powi(2)).sum::<f64>() / m);
    Ok(Metrics { rmse: (se / m).sqrt(), pehe })
}

/// Predictions and ITEs of any estimator, in original outcome units.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub yhat: Vec<f64>,
    pub tau_hat: Vec<f64>,
}

impl EstimatorModel {
    pub fn predictions(&self, data: &Dataset) -> Result<Predictions> {
        let ops = data.graph.operators::<f64>();
        Ok(Predictions {
            yhat: self.predict(&data.x, &data.t, &data.exposure, &ops)?,
            tau_hat: self.extract_ite(&data.x)?,
        })
    }
}

/// Metrics on `split` in units standardized by `scale` (the training
/// outcome sd), so results are comparable across estimators.
pub fn evaluate_split(pred: &Predictions, data: &Dataset, split: Split, scale: f64) -> Result<Metrics> {
    let rows = data.indices(split);
    let s = |v: &[f64]| v.iter().map(|x| x / scale).collect::<Vec<_>>();
    let tau = data.truth.as_ref().map(|t| s(&t.tau));
    metrics(&s(&pred.yhat), &s(&data.y), &s(&pred.tau_hat), tau.as_deref(), &rows)
}
