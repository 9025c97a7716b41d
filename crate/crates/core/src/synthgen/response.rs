use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ResponseModel {
    /// Linear superposition of baseline, own effect and spillover.
    G0,
    /// G0 plus κ·δ².
    G1,
    /// G0 plus (κ/2)·δ² + (κ/2)·τ·δ.
    G2,
}

impl ResponseModel {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "G0" | "g0" => Ok(Self::G0),
            "G1" | "g1" => Ok(Self::G1),
            "G2" | "g2" => Ok(Self::G2),
            other => Err(Error::invalid(format!("unknown response model {other:?} (expected G0, G1 or G2)"))),
        }
    }

    /// Noise-free outcome of one unit.
    pub fn mean_outcome(self, y0: f64, tau: f64, delta: f64, t: f64, kappa: f64) -> f64 {
        let lin = y0 + t * tau + delta;
        match self {
            Self::G0 => lin,
            Self::G1 => lin + kappa * delta * delta,
            Self::G2 => lin + 0.5 * kappa * delta * delta + 0.5 * kappa * tau * delta,
        }
    }
}

impl std::fmt::Display for ResponseModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[allow(clippy::too_many_arguments)]
pub fn gen_response<R: Rng + ?Sized>(
    y0: &[f64],
    tau: &[f64],
    delta: &[f64],
    t: &[f64],
    model: ResponseModel,
    kappa: f64,
    noise_sd: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let n = y0.len();
    if tau.len() != n || delta.len() != n || t.len() != n {
        return Err(Error::shape(format!(
            "response inputs have lengths {}, {}, {}, {}",
            n,
            tau.len(),
            delta.len(),
            t.len()
        )));
    }
    if !(kappa >= 0.0) {
        return Err(Error::invalid(format!("kappa must be >= 0, got {kappa}")));
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|e| Error::invalid(format!("noise sd {noise_sd}: {e}")))?;
    Ok((0..n)
        .map(|i| {
            let eps = if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 };
            model.mean_outcome(y0[i], tau[i], delta[i], t[i], kappa) + eps
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one(model: ResponseModel, kappa: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        gen_response(&[0.0], &[2.0], &[0.5], &[1.0], model, kappa, 0.0, &mut rng).unwrap()[0]
    }

    #[test]
    fn examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = gen_response(&[1.0], &[2.0], &[0.5], &[1.0], ResponseModel::G0, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(y, vec![3.5]);
        assert_eq!(one(ResponseModel::G1, 0.0), one(ResponseModel::G0, 0.0));
        assert!((one(ResponseModel::G2, 0.2) - 2.625).abs() < 1e-15);
        assert!((one(ResponseModel::G1, 0.2) - 2.55).abs() < 1e-15);
    }

    #[test]
    fn errors() {
        assert!(ResponseModel::parse("G3").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gen_response(&[0.0; 2], &[0.0], &[0.0; 2], &[0.0; 2], ResponseModel::G0, 0.0, 0.0, &mut rng).is_err());
    }

    #[test]
    fn noise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20_000;
        let y = gen_response(
            &vec![0.0; n],
            &vec![0.0; n],
            &vec![0.0; n],
            &vec![0.0; n],
            ResponseModel::G0,
            0.0,
            0.1,
            &mut rng,
        )
        .unwrap();
        let var = y.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.005);
    }
}
