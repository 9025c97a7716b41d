//! Two-class Gumbel-softmax relaxation of Bernoulli(p) treatment draws,
//! with a straight-through hard forward value.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::numkit::tape::{sigmoid, Tape, Var};
use crate::scalar::Scalar;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-6;

fn std_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// Per-node noise `g_treat - g_control` for independent standard Gumbels.
pub fn gumbel_noise<F: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<F> {
    (0..n).map(|_| F::lit(std_gumbel(rng) - std_gumbel(rng))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GumbelSample {
    pub soft: f64,
    pub hard: f64,
}

fn relax<F: Scalar>(p: F, noise: F, temperature: F) -> (F, F) {
    let lo = F::lit(PROB_CLAMP);
    let hi = F::one() - lo;
    let inside = p > lo && p < hi;
    let pc = p.max(lo).min(hi);
    let z = ((pc / (F::one() - pc)).ln() + noise) / temperature;
    let soft = sigmoid(z);
    let dsoft = if inside { soft * (F::one() - soft) / (temperature * pc * (F::one() - pc)) } else { F::zero() };
    (soft, dsoft)
}

/// Single relaxed draw for probability `p`.
pub fn gumbel_softmax_sample<R: Rng + ?Sized>(p: f64, temperature: f64, rng: &mut R) -> Result<GumbelSample> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("Gumbel temperature must be positive, got {temperature}")));
    }
    let noise = std_gumbel(rng) - std_gumbel(rng);
    let (soft, _) = relax(p, noise, temperature);
    Ok(GumbelSample { soft, hard: if soft > 0.5 { 1.0 } else { 0.0 } })
}

/// Relaxed sample for an n x 1 column of probabilities with frozen `noise`.
/// With `hard`, the forward value is the argmax in {0, 1} while the
/// backward pass uses the derivative of the soft relaxation.
pub fn gumbel_softmax<F: Scalar>(tape: &mut Tape<F>, p: Var, noise: &[F], temperature: F, hard: bool) -> Result<Var> {
    if !(temperature > F::zero()) {
        return Err(Error::invalid("Gumbel temperature must be positive"));
    }
    let probs = tape.value(p);
    if probs.cols() != 1 || probs.rows() != noise.len() {
        return Err(Error::shape(format!("{:?} probabilities vs {} noise draws", probs.shape(), noise.len())));
    }
    let half = F::lit(0.5);
    let (mut fwd, mut ds) = (Vec::with_capacity(noise.len()), Vec::with_capacity(noise.len()));
    for (&pv, &nv) in probs.data().iter().zip(noise) {
        let (soft, d) = relax(pv, nv, temperature);
        fwd.push(if hard {
            if soft > half {
                F::one()
            } else {
                F::zero()
            }
        } else {
            soft
        });
        ds.push(d);
    }
    tape.straight_through(p, Matrix::column(&fwd), ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn certain_treatment_almost_always_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let ones: f64 = (0..n).map(|_| gumbel_softmax_sample(1.0, 0.5, &mut rng).unwrap().hard).sum();
        assert!(ones / n as f64 >= 1.0 - 1e-4);
    }

    #[test]
    fn fair_coin_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let ones: f64 = (0..n).map(|_| gumbel_softmax_sample(0.5, 0.5, &mut rng).unwrap().hard).sum();
        assert!((ones / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn hard_rate_tracks_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 100_000;
        let ones: f64 = (0..n).map(|_| gumbel_softmax_sample(0.3, 0.5, &mut rng).unwrap().hard).sum();
        assert!((ones / n as f64 - 0.3).abs() < 0.01);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(gumbel_softmax_sample(0.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn straight_through_gradient_nonzero() {
        let mut tape = Tape::<f64>::new();
        let p = tape.param(Matrix::column(&[0.2, 0.5, 0.9]));
        let s = gumbel_softmax(&mut tape, p, &[0.1, -0.3, 0.0], 0.5, true).unwrap();
        assert!(tape.value(s).data().iter().all(|&v| v == 0.0 || v == 1.0));
        let l = tape.sum(s).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(p).unwrap().data().iter().all(|&g| g > 0.0));
    }
}
