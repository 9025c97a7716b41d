use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::synthgen::Spillover;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    /// α·max|τ|.
    pub bound: f64,
    pub pairs: usize,
    pub skipped: usize,
    pub violations: usize,
}

/// max_i |δ_i(π1) − δ_i(π2)| / ‖π1 − π2‖_∞, or None when π1 = π2.
pub fn lipschitz_ratio(spill: &Spillover, tau: &[f64], pi1: &[f64], pi2: &[f64]) -> Result<Option<f64>> {
    let dist = pi1.iter().zip(pi2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if pi1.len() != pi2.len() {
        return Err(Error::shape("policy lengths differ"));
    }
    if dist == 0.0 {
        return Ok(None);
    }
    let (d1, d2) = (spill.apply(pi1, tau)?, spill.apply(pi2, tau)?);
    Ok(Some(d1.iter().zip(&d2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / dist))
}

/// Samples `n_pairs` policy pairs with values in [0, 1] and compares the
/// largest observed ratio against α·max|τ| for first-order spillover.
pub fn lipschitz_check<R: Rng + ?Sized>(
    g: &Graph,
    tau: &[f64],
    alpha: f64,
    n_pairs: usize,
    rng: &mut R,
) -> Result<LipschitzReport> {
    let spill = Spillover::new(g, alpha, 1)?;
    let bound = alpha.abs() * tau.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let mut rep = LipschitzReport { max_ratio: 0.0, bound, pairs: 0, skipped: 0, violations: 0 };
    for _ in 0..n_pairs {
        let pi1: Vec<f64> = (0..g.n()).map(|_| rng.random()).collect();
        let pi2: Vec<f64> = (0..g.n()).map(|_| rng.random()).collect();
        match lipschitz_ratio(&spill, tau, &pi1, &pi2)? {
            Some(r) => {
                rep.pairs += 1;
                rep.max_ratio = rep.max_ratio.max(r);
                if r > bound + 1e-9 {
                    rep.violations += 1;
                }
            }
            None => rep.skipped += 1,
        }
    }
    Ok(rep)
}

/// Tightness witness: τ ≡ m1, π1 ≡ 0, π2 ≡ c. Every non-isolated node sees
/// its spillover move by α·m1·c, so the ratio is α·m1.
pub fn lipschitz_tight_ratio(g: &Graph, m1: f64, alpha: f64, c: f64) -> Result<Option<f64>> {
    let spill = Spillover::new(g, alpha, 1)?;
    let n = g.n();
    lipschitz_ratio(&spill, &vec![m1; n], &vec![0.0; n], &vec![c; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path_graph, random_graph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_policies_skipped() {
        let g = path_graph(4);
        let spill = Spillover::new(&g, 0.5, 1).unwrap();
        assert_eq!(lipschitz_ratio(&spill, &[1.0; 4], &[0.3; 4], &[0.3; 4]).unwrap(), None);
    }

    #[test]
    fn tight_case_reaches_bound() {
        let g = path_graph(6);
        let r = lipschitz_tight_ratio(&g, 2.0, 0.5, 0.7).unwrap().unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn random_pairs_respect_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = random_graph(60, 0.1, &mut rng);
        let tau: Vec<f64> = (0..60).map(|_| rng.random_range(-2.0..2.0)).collect();
        let rep = lipschitz_check(&g, &tau, 0.5, 500, &mut rng).unwrap();
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.pairs, 500);
        assert!(rep.max_ratio <= rep.bound + 1e-9);
    }
}
