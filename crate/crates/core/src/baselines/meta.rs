use serde::{Deserialize, Serialize};

use super::regressor::{Regressor, RegressorKind};
use crate::error::{Error, Result};
use crate::estimators::Predictions;
use crate::numkit::Matrix;
use crate::synthgen::{Dataset, Split};

/// Propensity estimates are clipped into this interval.
pub const PROPENSITY_CLIP: (f64, f64) = (0.02, 0.98);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Propensity {
    /// Known treatment probability of a randomized experiment.
    Constant {
        p: f64,
    },
    Logistic {
        w: Vec<f64>,
        b: f64,
    },
}

impl Propensity {
    pub fn predict(&self, x: &Matrix<f64>) -> Vec<f64> {
        let clip = |v: f64| v.clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1);
        match self {
            Propensity::Constant { p } => vec![clip(*p); x.rows()],
            Propensity::Logistic { w, b } => (0..x.rows())
                .map(|i| {
                    let z = b + x.row(i).iter().zip(w).map(|(a, c)| a * c).sum::<f64>();
                    clip(1.0 / (1.0 + (-z).exp()))
                })
                .collect(),
        }
    }
}

pub const LOGISTIC_STEPS: usize = 500;
pub const LOGISTIC_LR: f64 = 0.1;
pub const LOGISTIC_L2: f64 = 1e-4;

/// Logistic regression by full-batch gradient descent.
pub fn fit_propensity(x: &Matrix<f64>, t: &[f64]) -> Result<Propensity> {
    let (n, d) = x.shape();
    if t.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", t.len())));
    }
    let treated = t.iter().filter(|&&v| v == 1.0).count();
    if treated == 0 || treated == n {
        return Err(Error::invalid("propensity fit needs both treatment labels"));
    }
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..LOGISTIC_STEPS {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for i in 0..n {
            let r = x.row(i);
            let z = b + r.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let e = 1.0 / (1.0 + (-z).exp()) - t[i];
            gb += e;
            gw.iter_mut().zip(r).for_each(|(g, a)| *g += e * a);
        }
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= LOGISTIC_LR * (g / n as f64 + LOGISTIC_L2 * *wk);
        }
        b -= LOGISTIC_LR * gb / n as f64;
    }
    Ok(Propensity::Logistic { w, b })
}

/// Meta-learner flavour.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetaKind {
    Da,
    Dr,
}

/// Fitted DA/DR model: outcome models μ0, μ1 over [X, G] and the effect
/// model over X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearner {
    pub kind: MetaKind,
    pub mu0: Regressor,
    pub mu1: Regressor,
    pub effect: Regressor,
}

impl MetaLearner {
    pub fn predict_ite(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        self.effect.predict(x)
    }

    /// Factual outcome predictions μ_{T_i}([X_i, G_i]).
    pub fn predict_outcome(&self, x: &Matrix<f64>, t: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let xg = with_exposure(x, g)?;
        let (a, b) = (self.mu0.predict(&xg)?, self.mu1.predict(&xg)?);
        Ok(t.iter().enumerate().map(|(i, &ti)| if ti == 1.0 { b[i] } else { a[i] }).collect())
    }

    pub fn predictions(&self, data: &Dataset) -> Result<Predictions> {
        Ok(Predictions {
            yhat: self.predict_outcome(&data.x, &data.t, &data.exposure)?,
            tau_hat: self.predict_ite(&data.x)?,
        })
    }
}

/// [X | G] with the exposure appended as the last column.
pub fn with_exposure(x: &Matrix<f64>, g: &[f64]) -> Result<Matrix<f64>> {
    if g.len() != x.rows() {
        return Err(Error::shape(format!("{} exposures for {} rows", g.len(), x.rows())));
    }
    Matrix::hstack(&[x, &Matrix::column(g)])
}

/// Minimum training rows per arm.
pub const MIN_ARM: usize = 4;

struct ArmData {
    xg: Matrix<f64>,
    x: Matrix<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
    t: Vec<f64>,
    treated: Vec<usize>,
    control: Vec<usize>,
}

fn train_arms(data: &Dataset, prop: &Propensity) -> Result<ArmData> {
    let train = data.indices(Split::Train);
    let x = data.x.select_rows(&train);
    let ex: Vec<f64> = train.iter().map(|&i| data.exposure[i]).collect();
    let y: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training outcomes must be present"));
    }
    let t: Vec<f64> = train.iter().map(|&i| data.t[i]).collect();
    let treated: Vec<usize> = (0..t.len()).filter(|&k| t[k] == 1.0).collect();
    let control: Vec<usize> = (0..t.len()).filter(|&k| t[k] == 0.0).collect();
    if treated.len() < MIN_ARM || control.len() < MIN_ARM {
        return Err(Error::invalid(format!(
            "need at least {MIN_ARM} training rows per arm (treated {}, control {})",
            treated.len(),
            control.len()
        )));
    }
    let g = prop.predict(&x);
    Ok(ArmData { xg: with_exposure(&x, &ex)?, x, y, g, t, treated, control })
}

fn pick<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Domain-adaptation learner: weighted arm models, cross-arm imputed
/// effects, and a final effect regression on X.
pub fn fit_da(data: &Dataset, prop: &Propensity, kind: &RegressorKind) -> Result<MetaLearner> {
    let a = train_arms(data, prop)?;
    let w0: Vec<f64> = a.control.iter().map(|&k| a.g[k] / (1.0 - a.g[k])).collect();
    let w1: Vec<f64> = a.treated.iter().map(|&k| (1.0 - a.g[k]) / a.g[k]).collect();
    let mu0 = kind.fit(&a.xg.select_rows(&a.control), &pick(&a.y, &a.control), Some(&w0))?;
    let mu1 = kind.fit(&a.xg.select_rows(&a.treated), &pick(&a.y, &a.treated), Some(&w1))?;

    let m0 = mu0.predict(&a.xg.select_rows(&a.treated))?;
    let m1 = mu1.predict(&a.xg.select_rows(&a.control))?;
    let mut d = Vec::with_capacity(a.t.len());
    let mut rows = Vec::with_capacity(a.t.len());
    for (k, &i) in a.treated.iter().enumerate() {
        d.push(a.y[i] - m0[k]);
        rows.push(i);
    }
    for (k, &i) in a.control.iter().enumerate() {
        d.push(m1[k] - a.y[i]);
        rows.push(i);
    }
    let effect = kind.fit(&a.x.select_rows(&rows), &d, None)?;
    Ok(MetaLearner { kind: MetaKind::Da, mu0, mu1, effect })
}

/// Doubly robust (AIPW) pseudo-outcomes regressed on X.
pub fn fit_dr(data: &Dataset, prop: &Propensity, kind: &RegressorKind) -> Result<MetaLearner> {
    let a = train_arms(data, prop)?;
    let at_clip = a.g.iter().filter(|&&g| g <= PROPENSITY_CLIP.0 || g >= PROPENSITY_CLIP.1).count();
    if at_clip > 0 {
        log::warn!("{at_clip} propensities at the clip boundary; doubly robust pseudo-outcomes may be noisy");
    }
    let mu0 = kind.fit(&a.xg.select_rows(&a.control), &pick(&a.y, &a.control), None)?;
    let mu1 = kind.fit(&a.xg.select_rows(&a.treated), &pick(&a.y, &a.treated), None)?;
    let (p0, p1) = (mu0.predict(&a.xg)?, mu1.predict(&a.xg)?);
    let d = dr_pseudo_outcomes(&a.y, &a.t, &a.g, &p0, &p1);
    let effect = kind.fit(&a.x, &d, None)?;
    Ok(MetaLearner { kind: MetaKind::Dr, mu0, mu1, effect })
}

/// D¹ − D⁰ with D¹ = μ1 + 1{T=1}(Y − μ1)/g and D⁰ = μ0 + 1{T=0}(Y − μ0)/(1 − g).
pub fn dr_pseudo_outcomes(y: &[f64], t: &[f64], g: &[f64], mu0: &[f64], mu1: &[f64]) -> Vec<f64> {
    (0..y.len())
        .map(|i| {
            let d1 = mu1[i] + if t[i] == 1.0 { (y[i] - mu1[i]) / g[i] } else { 0.0 };
            let d0 = mu0[i] + if t[i] == 0.0 { (y[i] - mu0[i]) / (1.0 - g[i]) } else { 0.0 };
            d1 - d0
        })
        .collect()
}

pub fn fit_meta(kind: MetaKind, data: &Dataset, prop: &Propensity, reg: &RegressorKind) -> Result<MetaLearner> {
    match kind {
        MetaKind::Da => fit_da(data, prop, reg),
        MetaKind::Dr => fit_dr(data, prop, reg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Edgeless dataset with Y = T·(w·X) and everything in train.
    fn effect_only(n: usize, p: f64, seed: u64) -> (Dataset, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_vec(n, 3, (0..3 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let tau: Vec<f64> = (0..n).map(|i| 1.5 * x.get(i, 0) - 0.5 * x.get(i, 2) + 0.3).collect();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(p))).collect();
        let y = (0..n).map(|i| t[i] * tau[i]).collect();
        let ds = Dataset {
            raw: x.clone(),
            x,
            names: vec!["a".into(), "b".into(), "c".into()],
            graph: Graph::empty(n),
            exposure: vec![0.0; n],
            t,
            y,
            split: vec![Split::Train; n],
            truth: None,
            config: None,
        };
        (ds, tau)
    }

    fn r2(pred: &[f64], truth: &[f64]) -> f64 {
        let m = truth.iter().sum::<f64>() / truth.len() as f64;
        let ss_tot: f64 = truth.iter().map(|v| (v - m).powi(2)).sum();
        let ss_res: f64 = pred.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn da_recovers_linear_effect() {
        let (ds, tau) = effect_only(400, 0.5, 1);
        let m = fit_da(&ds, &Propensity::Constant { p: 0.5 }, &RegressorKind::ridge(1e-6)).unwrap();
        assert!(r2(&m.predict_ite(&ds.x).unwrap(), &tau) > 0.99);
    }

    #[test]
    fn dr_recovers_linear_effect() {
        let (ds, tau) = effect_only(400, 0.3, 2);
        let m = fit_dr(&ds, &Propensity::Constant { p: 0.3 }, &RegressorKind::ridge(1e-6)).unwrap();
        assert!(r2(&m.predict_ite(&ds.x).unwrap(), &tau) > 0.99);
    }

    #[test]
    fn dr_identity_with_exact_outcome_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 50;
        let mu0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tau: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mu1: Vec<f64> = mu0.iter().zip(&tau).map(|(a, b)| a + b).collect();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
        let y: Vec<f64> = (0..n).map(|i| if t[i] == 1.0 { mu1[i] } else { mu0[i] }).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..0.95)).collect();
        let d = dr_pseudo_outcomes(&y, &t, &g, &mu0, &mu1);
        for i in 0..n {
            assert!((d[i] - tau[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn dr_mean_unbiased_over_seeds() {
        // correct g = 0.5 and μ ≡ 0: mean pseudo-outcome is unbiased for c
        let c = 1.3;
        let means: Vec<f64> = (0..30)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + s);
                let n = 400;
                let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.5))).collect();
                let y: Vec<f64> = t.iter().map(|&ti| ti * c + rng.random_range(-0.5..0.5)).collect();
                let d = dr_pseudo_outcomes(&y, &t, &[0.5; 400], &[0.0; 400], &[0.0; 400]);
                d.iter().sum::<f64>() / n as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / 30.0;
        let sd = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 29.0).sqrt();
        assert!((m - c).abs() < 3.0 * sd / 30f64.sqrt(), "mean {m} sd {sd}");
    }

    #[test]
    fn constant_half_is_unweighted() {
        let (ds, _) = effect_only(100, 0.5, 4);
        let a = fit_da(&ds, &Propensity::Constant { p: 0.5 }, &RegressorKind::ridge(0.1)).unwrap();
        let arms = train_arms(&ds, &Propensity::Constant { p: 0.5 }).unwrap();
        let mu0 = RegressorKind::ridge(0.1)
            .fit(&arms.xg.select_rows(&arms.control), &pick(&arms.y, &arms.control), None)
            .unwrap();
        assert_eq!(a.mu0, mu0);
    }

    #[test]
    fn arm_guards() {
        let (mut ds, _) = effect_only(20, 0.5, 5);
        ds.t = vec![1.0; 20];
        assert!(fit_dr(&ds, &Propensity::Constant { p: 0.5 }, &RegressorKind::ridge(1.0)).is_err());
        ds.t = (0..20).map(|i| f64::from(i < 3)).collect();
        assert!(fit_da(&ds, &Propensity::Constant { p: 0.5 }, &RegressorKind::ridge(1.0)).is_err());
    }

    #[test]
    fn propensity_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 2000;
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let t: Vec<f64> = (0..n).map(|_| f64::from(rng.random_bool(0.3))).collect();
        let base = t.iter().sum::<f64>() / n as f64;
        let p = fit_propensity(&x, &t).unwrap();
        assert!(p.predict(&x).iter().all(|g| (g - base).abs() < 0.05));

        let sep = Matrix::column(&[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let p = fit_propensity(&sep, &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(p.predict(&sep).iter().all(|g| (PROPENSITY_CLIP.0..=PROPENSITY_CLIP.1).contains(g)));

        assert!(Propensity::Constant { p: 0.1 }.predict(&sep).iter().all(|&g| g == 0.1));
        assert!(fit_propensity(&sep, &[1.0; 6]).is_err());
    }
}
