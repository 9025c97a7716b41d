use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Adam, AdamConfig, Matrix, Mlp, Params, Tape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RegressorKind {
    Ridge {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_lr")]
        lr: f64,
        #[serde(default = "default_wd")]
        weight_decay: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_lambda() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}
fn default_epochs() -> usize {
    500
}
fn default_lr() -> f64 {
    0.01
}
fn default_wd() -> f64 {
    1e-4
}

impl RegressorKind {
    pub fn ridge(lambda: f64) -> Self {
        RegressorKind::Ridge { lambda }
    }

    pub fn mlp(seed: u64) -> Self {
        RegressorKind::Mlp {
            hidden: default_hidden(),
            epochs: default_epochs(),
            lr: default_lr(),
            weight_decay: default_wd(),
            seed,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            RegressorKind::Ridge { .. } => "ridge",
            RegressorKind::Mlp { .. } => "mlp",
        }
    }

    /// Fits on rows of `x` with optional non-negative sample weights.
    pub fn fit(&self, x: &Matrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<Regressor> {
        let n = x.rows();
        if y.len() != n || weights.is_some_and(|w| w.len() != n) {
            return Err(Error::shape(format!("{n} rows, {} targets", y.len())));
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit a regressor on zero rows"));
        }
        if y.iter().any(|v| !v.is_finite()) || weights.is_some_and(|w| w.iter().any(|v| !(v.is_finite() && *v >= 0.0)))
        {
            return Err(Error::invalid("targets must be finite and weights finite and non-negative"));
        }
        match self {
            RegressorKind::Ridge { lambda } => fit_ridge(x, y, weights, *lambda),
            RegressorKind::Mlp { hidden, epochs, lr, weight_decay, seed } => {
                fit_mlp(x, y, weights, hidden, *epochs, *lr, *weight_decay, *seed)
            }
        }
    }
}

/// A fitted regressor; immutable after fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regressor {
    Ridge {
        w: Vec<f64>,
        b: f64,
        lambda: f64,
    },
    Mlp {
        net: Mlp,
        #[serde(with = "params_doc")]
        params: Params<f64>,
        y_mean: f64,
        y_scale: f64,
    },
}

mod params_doc {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::numkit::{Params, ParamsDocument};

    pub fn serialize<S: Serializer>(p: &Params<f64>, s: S) -> Result<S::Ok, S::Error> {
        p.to_document().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Params<f64>, D::Error> {
        Params::from_document(&ParamsDocument::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

impl Regressor {
    pub fn predict(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        match self {
            Regressor::Ridge { w, b, .. } => {
                if x.cols() != w.len() {
                    return Err(Error::shape(format!("{} features, fitted on {}", x.cols(), w.len())));
                }
                Ok((0..x.rows()).map(|i| b + x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>()).collect())
            }
            Regressor::Mlp { net, params, y_mean, y_scale } => {
                let mut tape = Tape::new();
                let vars = params.attach(&mut tape, false);
                let xv = tape.constant(x.clone());
                let out = net.forward::<f64, ChaCha8Rng>(&mut tape, &vars, xv, false, 0.0, None)?;
                Ok(tape.value(out).data().iter().map(|v| y_mean + y_scale * v).collect())
            }
        }
    }
}

fn weighted_mean(v: impl Iterator<Item = f64>, w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    v.zip(w).map(|(a, b)| a * b).sum::<f64>() / s
}

/// Weighted ridge with an unpenalized intercept: centre by the weighted
/// means, then solve (Xᵀ W X + λ I) β = Xᵀ W y. The jitter grows tenfold
/// on each failed factorization.
fn fit_ridge(x: &Matrix<f64>, y: &[f64], weights: Option<&[f64]>, lambda: f64) -> Result<Regressor> {
    if !(lambda >= 0.0) {
        return Err(Error::invalid(format!("ridge lambda must be >= 0, got {lambda}")));
    }
    let (n, d) = x.shape();
    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    if !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }
    let xm: Vec<f64> = (0..d).map(|c| weighted_mean((0..n).map(|r| x.get(r, c)), w)).collect();
    let ym = weighted_mean(y.iter().copied(), w);

    let xc = DMatrix::from_fn(n, d, |r, c| (x.get(r, c) - xm[c]) * w[r].sqrt());
    let yc = DVector::from_fn(n, |r, _| (y[r] - ym) * w[r].sqrt());
    let gram = xc.transpose() * &xc;
    let rhs = xc.transpose() * yc;
    let mut jitter = lambda.max(1e-8);
    for _ in 0..8 {
        let a = &gram + DMatrix::identity(d, d) * jitter;
        if let Some(ch) = a.cholesky() {
            let beta = ch.solve(&rhs);
            let wv: Vec<f64> = beta.iter().copied().collect();
            let b = ym - wv.iter().zip(&xm).map(|(a, m)| a * m).sum::<f64>();
            return Ok(Regressor::Ridge { w: wv, b, lambda });
        }
        jitter *= 10.0;
    }
    Err(Error::Numeric("ridge normal equations are singular".into()))
}

#[allow(clippy::too_many_arguments)]
fn fit_mlp(
    x: &Matrix<f64>,
    y: &[f64],
    weights: Option<&[f64]>,
    hidden: &[usize],
    epochs: usize,
    lr: f64,
    weight_decay: f64,
    seed: u64,
) -> Result<Regressor> {
    let n = x.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let y_scale = if sd > 1e-12 { sd } else { 1.0 };
    let target = Matrix::column(&y.iter().map(|v| (v - y_mean) / y_scale).collect::<Vec<_>>());

    let ones = vec![1.0; n];
    let w = weights.unwrap_or(&ones);
    let wsum: f64 = w.iter().sum();
    if !(wsum > 0.0) {
        return Err(Error::invalid("sample weights sum to zero"));
    }
    let wcol = Matrix::column(&w.iter().map(|v| v / wsum).collect::<Vec<_>>());

    let mut params = Params::new();
    let mut dims = vec![x.cols()];
    dims.extend(hidden);
    dims.push(1);
    let net = Mlp::build(&mut params, "mlp", &dims, &mut rng);
    let mut adam = Adam::new(AdamConfig { lr, weight_decay, ..AdamConfig::default() }, &params)?;
    let mut tape = Tape::new();
    for epoch in 1..=epochs {
        tape.reset();
        let vars = params.attach(&mut tape, true);
        let xv = tape.constant(x.clone());
        let out = net.forward::<f64, ChaCha8Rng>(&mut tape, &vars, xv, false, 0.0, None)?;
        let tv = tape.constant(target.clone());
        let d = tape.sub(out, tv)?;
        let sq = tape.square(d)?;
        let wv = tape.constant(wcol.clone());
        let weighted = tape.scale_rows(sq, wv)?;
        let loss = tape.sum(weighted)?;
        tape.backward(loss)?;
        let grads = params.collect_grads(&tape, &vars);
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Diverged { epoch, last_finite: epoch.checked_sub(1) });
        }
        adam.step(&mut params, &grads)?;
    }
    Ok(Regressor::Mlp { net, params, y_mean, y_scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn linear_data(n: usize, rng: &mut ChaCha8Rng) -> (Matrix<f64>, Vec<f64>) {
        let x = Matrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let y = (0..n).map(|i| 2.0 * x.get(i, 0) - x.get(i, 1) + 0.5 * x.get(i, 2) + 3.0).collect();
        (x, y)
    }

    #[test]
    fn ridge_recovers_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = linear_data(200, &mut rng);
        let r = RegressorKind::ridge(1e-8).fit(&x, &y, None).unwrap();
        let Regressor::Ridge { w, b, .. } = &r else { unreachable!() };
        assert!((w[0] - 2.0).abs() < 1e-6 && (w[1] + 1.0).abs() < 1e-6 && (*b - 3.0).abs() < 1e-6);
    }

    #[test]
    fn ridge_shrinks_monotonically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, y) = linear_data(100, &mut rng);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 1.0, 10.0, 100.0, 1e4, 1e8] {
            let Regressor::Ridge { w, .. } = RegressorKind::ridge(lambda).fit(&x, &y, None).unwrap() else {
                unreachable!()
            };
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= last + 1e-12);
            last = norm;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn weights_select_rows() {
        // zero weight on the second half makes its (corrupted) targets irrelevant
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, mut y) = linear_data(80, &mut rng);
        y[40..].iter_mut().for_each(|v| *v = 100.0);
        let w: Vec<f64> = (0..80).map(|i| if i < 40 { 1.0 } else { 0.0 }).collect();
        let r = RegressorKind::ridge(1e-8).fit(&x, &y, Some(&w)).unwrap();
        let p = r.predict(&x).unwrap();
        assert!((p[0] - (2.0 * x.get(0, 0) - x.get(0, 1) + 0.5 * x.get(0, 2) + 3.0)).abs() < 1e-6);
    }

    #[test]
    fn collinear_features_use_jitter() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        let r = RegressorKind::ridge(0.0).fit(&x, &[1.0, 2.0, 3.0], None).unwrap();
        assert!(r.predict(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mlp_fits_smooth_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (x, _) = linear_data(200, &mut rng);
        let y: Vec<f64> = (0..200).map(|i| (2.0 * x.get(i, 0)).sin() + x.get(i, 1).powi(2)).collect();
        let r = RegressorKind::mlp(0).fit(&x, &y, None).unwrap();
        let p = r.predict(&x).unwrap();
        let mse = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 200.0;
        let var = {
            let m = y.iter().sum::<f64>() / 200.0;
            y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 200.0
        };
        assert!(mse < 0.1 * var, "mse {mse} var {var}");
    }

    #[test]
    fn bad_inputs() {
        let x = Matrix::zeros(3, 2);
        assert!(RegressorKind::ridge(1.0).fit(&x, &[1.0, 2.0], None).is_err());
        assert!(RegressorKind::ridge(-1.0).fit(&x, &[1.0, 2.0, 3.0], None).is_err());
        assert!(RegressorKind::ridge(1.0).fit(&x, &[1.0, 2.0, 3.0], Some(&[0.0; 3])).is_err());
    }

    #[test]
    fn fitted_models_survive_json() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = linear_data(60, &mut rng);
        let kinds = [
            RegressorKind::ridge(0.5),
            RegressorKind::Mlp { hidden: vec![8], epochs: 20, lr: 0.01, weight_decay: 0.0, seed: 1 },
        ];
        for kind in kinds {
            let r = kind.fit(&x, &y, None).unwrap();
            let back: Regressor = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
            assert_eq!(back.predict(&x).unwrap(), r.predict(&x).unwrap());
        }
    }
}
