//! Baseline outcomes Y(T=0, empty graph) and individual treatment effects.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::covariates::Schema;
use crate::error::{Error, Result};
use crate::numkit::Matrix;

pub const RANDOM_NET_WIDTH: usize = 8;
/// Variance of every random-network coefficient.
pub const RANDOM_NET_VAR: f64 = 0.25;
pub const POKEC_NOISE_MEAN: f64 = 0.1;
pub const POKEC_NOISE_VAR: f64 = 0.25;

/// One-hidden-layer tanh network with Gaussian coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomNet {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl RandomNet {
    pub fn draw<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        let nd = Normal::new(0.0, RANDOM_NET_VAR.sqrt()).expect("valid sd");
        let mut s = || nd.sample(rng);
        Self {
            w1: (0..input).map(|_| (0..RANDOM_NET_WIDTH).map(|_| s()).collect()).collect(),
            b1: (0..RANDOM_NET_WIDTH).map(|_| s()).collect(),
            w2: (0..RANDOM_NET_WIDTH).map(|_| s()).collect(),
            b2: s(),
        }
    }

    /// Network that outputs 0 everywhere.
    pub fn zero(input: usize) -> Self {
        Self {
            w1: vec![vec![0.0; RANDOM_NET_WIDTH]; input],
            b1: vec![0.0; RANDOM_NET_WIDTH],
            w2: vec![0.0; RANDOM_NET_WIDTH],
            b2: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut out = self.b2;
        for (h, (&b, &w2)) in self.b1.iter().zip(&self.w2).enumerate() {
            let pre: f64 = b + x.iter().zip(&self.w1).map(|(xi, row)| xi * row[h]).sum::<f64>();
            out += w2 * pre.tanh();
        }
        out
    }
}

/// Covariates feeding the nonlinear part of the baseline outcome (summed
/// into a single input).
pub const WAVE1_Y0_NONLINEAR: [&str; 8] = ["H1HS1", "H1HS3", "H1WP17B", "H1TO51", "H1TO53", "H1NB5", "H1EE3", "PA57D"];

/// Covariates absent from the linear part of the treatment effect.
pub const WAVE1_TAU_NONLINEAR: [&str; 10] =
    ["H1HS1", "H1HS3", "H1WP17B", "H1TO51", "H1TO53", "H1NB5", "H1EE3", "PA57D", "H1DA5", "H1DA7"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TruthModel {
    Wave1 { f_y0: RandomNet, f_tau: RandomNet },
    Pokec { noise_mean: f64, noise_var: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaseTruth {
    pub y0: Vec<f64>,
    pub tau: Vec<f64>,
}

impl TruthModel {
    pub fn draw<R: Rng + ?Sized>(schema: Schema, rng: &mut R) -> Self {
        match schema {
            Schema::Wave1Like => TruthModel::Wave1 {
                f_y0: RandomNet::draw(1, rng),
                f_tau: RandomNet::draw(WAVE1_TAU_NONLINEAR.len(), rng),
            },
            Schema::PokecLike => TruthModel::Pokec { noise_mean: POKEC_NOISE_MEAN, noise_var: POKEC_NOISE_VAR },
        }
    }

    pub fn schema(&self) -> Schema {
        match self {
            TruthModel::Wave1 { .. } => Schema::Wave1Like,
            TruthModel::Pokec { .. } => Schema::PokecLike,
        }
    }

    /// Evaluates Y0 and tau row by row. The Pokec form draws its additive
    /// noise from `rng`; the Wave1 form is deterministic.
    pub fn evaluate<R: Rng + ?Sized>(&self, x: &Matrix<f64>, rng: &mut R) -> Result<BaseTruth> {
        let schema = self.schema();
        if x.cols() != schema.features().len() {
            return Err(Error::invalid(format!(
                "{} covariate columns for schema {:?} ({} expected)",
                x.cols(),
                schema,
                schema.features().len()
            )));
        }
        let n = x.rows();
        let mut y0 = Vec::with_capacity(n);
        let mut tau = Vec::with_capacity(n);
        match self {
            TruthModel::Wave1 { f_y0, f_tau } => {
                let c = |name: &str| schema.column(name);
                let y0_in: Vec<usize> = WAVE1_Y0_NONLINEAR.iter().map(|s| c(s)).collect();
                let tau_in: Vec<usize> = WAVE1_TAU_NONLINEAR.iter().map(|s| c(s)).collect();
                for i in 0..n {
                    let r = x.row(i);
                    let v = |name: &str| r[c(name)];
                    let grades = v("H1ED11") + v("H1ED12") + v("H1ED13") + v("H1ED14");
                    let s: f64 = y0_in.iter().map(|&k| r[k]).sum();
                    y0.push(
                        -v("H1GH52") + 2.0 * v("H1ED3") - v("H1ED5") - 2.0 * v("H1ED7") - 0.5 * grades
                            + 0.5 * (v("H1DA5") + v("H1DA7"))
                            - 3.0 * v("H1DS12")
                            + f_y0.eval(&[s]),
                    );
                    let rest: Vec<f64> = tau_in.iter().map(|&k| r[k]).collect();
                    tau.push(
                        v("H1ED3")
                            + 0.5 * (v("H1GH52") + v("H1ED5") + v("H1ED7"))
                            + 0.5 * grades
                            + v("H1DS12")
                            + f_tau.eval(&rest),
                    );
                }
            }
            TruthModel::Pokec { noise_mean, noise_var } => {
                let nd = Normal::new(*noise_mean, noise_var.sqrt())
                    .map_err(|e| Error::invalid(format!("noise distribution: {e}")))?;
                let c = |name: &str| schema.column(name);
                for i in 0..n {
                    let r = x.row(i);
                    let v = |name: &str| r[c(name)];
                    y0.push(
                        0.2 * (1.0 - v("gender")) + 0.5 * v("age") - 0.2 * v("weight") + 0.5 * v("education")
                            - 0.6 * (3.0 - v("smoke"))
                            + 0.2 * v("sex")
                            - 0.6 * (3.0 - v("alcohol"))
                            + nd.sample(rng),
                    );
                    tau.push(
                        0.8 * (1.0 - v("gender"))
                            + v("age")
                            + 0.3 * v("weight")
                            + 0.5 * (1.0 - v("eyesight"))
                            + 0.5 * (v("education") + 0.5)
                            + 0.6 * v("smoke")
                            + 0.5 * v("alcohol")
                            + nd.sample(rng),
                    );
                }
            }
        }
        Ok(BaseTruth { y0, tau })
    }
}

/// Draws a fresh truth model for `schema` and evaluates it on `x`.
pub fn gen_truth<R: Rng + ?Sized>(x: &Matrix<f64>, schema: Schema, rng: &mut R) -> Result<(TruthModel, BaseTruth)> {
    let model = TruthModel::draw(schema, rng);
    let truth = model.evaluate(x, rng)?;
    Ok((model, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_wave() -> TruthModel {
        TruthModel::Wave1 { f_y0: RandomNet::zero(1), f_tau: RandomNet::zero(10) }
    }

    #[test]
    fn zero_covariates_zero_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = zero_wave().evaluate(&Matrix::zeros(3, 19), &mut rng).unwrap();
        assert!(t.y0.iter().chain(&t.tau).all(|&v| v == 0.0));
    }

    #[test]
    fn drug_selling_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (model, _) = gen_truth(&Matrix::zeros(2, 19), Schema::Wave1Like, &mut rng).unwrap();
        let mut x = Matrix::zeros(2, 19);
        x.set(1, Schema::Wave1Like.column("H1DS12"), 1.0);
        let t = model.evaluate(&x, &mut rng).unwrap();
        assert!((t.y0[1] - t.y0[0] + 3.0).abs() < 1e-12);
        assert!((t.tau[1] - t.tau[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schema_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_truth(&Matrix::zeros(3, 9), Schema::Wave1Like, &mut rng).is_err());
    }

    /// Straight-line transcription of the printed Wave1 formulas.
    #[test]
    fn wave1_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cov = super::super::covariates::gen_covariates(Schema::Wave1Like, 6, &mut rng).unwrap();
        let (model, t) = gen_truth(&cov.x, Schema::Wave1Like, &mut rng).unwrap();
        let TruthModel::Wave1 { f_y0, f_tau } = &model else { unreachable!() };
        for i in 0..6 {
            let r = cov.x.row(i);
            // column order: GH52 ED3 ED5 ED7 HS1 HS3 WP17B TO51 TO53 NB5 EE3 PA57D DA5 DA7 ED11 ED12 ED13 ED14 DS12
            let y0 = -r[0] + 2.0 * r[1] - r[2] - 2.0 * r[3] - 0.5 * (r[14] + r[15] + r[16] + r[17])
                + 0.5 * (r[12] + r[13])
                - 3.0 * r[18]
                + f_y0.eval(&[r[4] + r[5] + r[6] + r[7] + r[8] + r[9] + r[10] + r[11]]);
            let tau = r[1]
                + 0.5 * (r[0] + r[2] + r[3])
                + 0.5 * (r[14] + r[15] + r[16] + r[17])
                + r[18]
                + f_tau.eval(&[r[4], r[5], r[6], r[7], r[8], r[9], r[10], r[11], r[12], r[13]]);
            assert!((t.y0[i] - y0).abs() < 1e-12);
            assert!((t.tau[i] - tau).abs() < 1e-12);
        }
    }

    #[test]
    fn pokec_noise_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = TruthModel::draw(Schema::PokecLike, &mut rng);
        let x = Matrix::zeros(20_000, 9);
        let t = model.evaluate(&x, &mut rng).unwrap();
        // zero covariates: y0 = 0.2 - 1.8 - 1.8 + eps, tau = 0.8 + 0.5 + 0.25 + eps
        let my0 = t.y0.iter().sum::<f64>() / 20_000.0;
        let mtau = t.tau.iter().sum::<f64>() / 20_000.0;
        assert!((my0 - (0.2 - 3.6 + 0.1)).abs() < 0.02);
        assert!((mtau - (1.55 + 0.1)).abs() < 0.02);
    }
}
