use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::numkit::params::Params;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Adam with bias correction and decoupled weight decay
/// (`θ ← θ(1 - lr·wd)` before the moment update is applied).
#[derive(Debug, Clone)]
pub struct Adam<F> {
    pub cfg: AdamConfig,
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
    t: i32,
}

impl<F: Scalar> Adam<F> {
    pub fn new(cfg: AdamConfig, params: &Params<F>) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {}", cfg.lr)));
        }
        let zeros = |p: &Matrix<F>| Matrix::zeros(p.rows(), p.cols());
        Ok(Self {
            cfg,
            m: params.values().iter().map(zeros).collect(),
            v: params.values().iter().map(zeros).collect(),
            t: 0,
        })
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, params: &mut Params<F>, grads: &[Matrix<F>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        self.t += 1;
        let c = self.cfg;
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let lr = F::lit(c.lr);
        let decay = F::one() - F::lit(c.lr * c.weight_decay);
        let bc1 = F::one() - b1.powi(self.t);
        let bc2 = F::one() - b2.powi(self.t);
        let eps = F::lit(c.eps);
        for (k, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape(format!("gradient {:?} for parameter {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (self.m[k].data_mut(), self.v[k].data_mut());
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = b1 * *mv + (F::one() - b1) * gv;
                *vv = b2 * *vv + (F::one() - b2) * gv * gv;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *pv = *pv * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// One Adam step on a bare parameter set; convenience for tests and tools.
pub fn adam_step<F: Scalar>(params: &mut Params<F>, grads: &[Matrix<F>], state: &mut Adam<F>) -> Result<()> {
    state.step(params, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> Params<f64> {
        let mut p = Params::new();
        p.add("x", Matrix::scalar(v));
        p
    }

    #[test]
    fn first_step_magnitude() {
        let cfg = AdamConfig { lr: 0.01, ..Default::default() };
        for g in [3.0, -0.2, 1e-3] {
            let mut p = single(1.0);
            let mut opt = Adam::new(cfg, &p).unwrap();
            opt.step(&mut p, &[Matrix::scalar(g)]).unwrap();
            let delta = (p.values()[0].item() - 1.0).abs();
            let expected = cfg.lr * g.abs() / (g.abs() + cfg.eps);
            assert!((delta - expected).abs() < 1e-15);
            assert!((delta - cfg.lr).abs() < 1e-6 * cfg.lr.max(1.0) + cfg.lr * 1e-5);
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut p = single(0.37);
        let mut opt = Adam::new(AdamConfig::default(), &p).unwrap();
        opt.step(&mut p, &[Matrix::scalar(0.0)]).unwrap();
        assert_eq!(p.values()[0].item(), 0.37);
    }

    #[test]
    fn sign_steps_without_momentum() {
        let cfg = AdamConfig { lr: 0.1, beta1: 0.0, beta2: 0.0, ..Default::default() };
        let mut p = single(0.0);
        let mut opt = Adam::new(cfg, &p).unwrap();
        for k in 1..=2 {
            opt.step(&mut p, &[Matrix::scalar(-4.0)]).unwrap();
            assert!((p.values()[0].item() - 0.1 * k as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn decoupled_weight_decay_shrinks() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut p = single(2.0);
        let mut opt = Adam::new(cfg, &p).unwrap();
        opt.step(&mut p, &[Matrix::scalar(0.0)]).unwrap();
        assert!((p.values()[0].item() - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = single(1.0);
        assert!(Adam::new(AdamConfig { lr: 0.0, ..Default::default() }, &p).is_err());
        let mut p = single(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p).unwrap();
        assert!(opt.step(&mut p, &[Matrix::zeros(2, 1)]).is_err());
    }
}
