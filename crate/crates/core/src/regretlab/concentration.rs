use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hypergraph::{build_hypergraph, Hypergraph};
use crate::error::{Error, Result};
use crate::graph::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseDist {
    /// U(0, 1), center 0.5.
    #[default]
    Uniform,
    /// Bernoulli(0.5), center 0.5.
    Bernoulli,
    /// N(0, 1), center 0; needs clipping to be bounded.
    Gaussian,
}

impl BaseDist {
    fn center(self) -> f64 {
        match self {
            BaseDist::Uniform | BaseDist::Bernoulli => 0.5,
            BaseDist::Gaussian => 0.0,
        }
    }

    fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            BaseDist::Uniform => rng.random(),
            BaseDist::Bernoulli => f64::from(u8::from(rng.random_bool(0.5))),
            BaseDist::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// ξ_i = mean of i.i.d. node draws over hyperedge i, optionally clipped
/// to center ± half_width. Every base law is symmetric, so all ξ_i share
/// the center as their mean.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XiFamily {
    pub base: BaseDist,
    pub half_width: Option<f64>,
}

impl XiFamily {
    /// Range (a, b) of ξ.
    pub fn bounds(&self) -> Result<(f64, f64)> {
        let c = self.base.center();
        let natural = match self.base {
            BaseDist::Uniform | BaseDist::Bernoulli => Some(0.5f64),
            BaseDist::Gaussian => None,
        };
        let h = match (natural, self.half_width) {
            (_, Some(h)) if !(h > 0.0 && h.is_finite()) => {
                return Err(Error::invalid(format!("clip half-width must be positive, got {h}")))
            }
            (Some(a), Some(h)) => a.min(h),
            (Some(a), None) => a,
            (None, Some(h)) => h,
            (None, None) => return Err(Error::invalid("unbounded ξ family: Gaussian draws need a clip")),
        };
        Ok((c - h, c + h))
    }

    pub fn mean(&self) -> f64 {
        self.base.center()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub eps: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Binomial standard error at the bound.
    pub se: f64,
    pub violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n: usize,
    pub omega: usize,
    pub d_max: usize,
    pub trials: usize,
    pub a: f64,
    pub b: f64,
    pub rows: Vec<TailRow>,
}

impl ConcentrationReport {
    pub fn violations(&self) -> usize {
        self.rows.iter().filter(|r| r.violation).count()
    }
}

/// exp(−nε² / (2ω(b−a)²)).
pub fn networked_tail_bound(n: usize, omega: usize, range: f64, eps: f64) -> f64 {
    (-(n as f64) * eps * eps / (2.0 * omega as f64 * range * range)).exp()
}

/// Identical hyperedges (e.g. every edge of a star) are evaluated once.
fn unique_edges(h: &Hypergraph) -> Vec<(Vec<usize>, usize)> {
    let mut seen: HashMap<&[usize], usize> = HashMap::new();
    let mut out: Vec<(Vec<usize>, usize)> = Vec::new();
    for e in &h.edges {
        match seen.get(e.as_slice()) {
            Some(&k) => out[k].1 += 1,
            None => {
                seen.insert(e, out.len());
                out.push((e.clone(), 1));
            }
        }
    }
    out
}

/// Monte-Carlo tail frequencies of |mean ξ − μ| ≥ ε against the networked
/// bound. Trial k draws from its own ChaCha stream k of `seed`, so results
/// do not depend on the thread count.
pub fn concentration_check(
    g: &Graph,
    family: XiFamily,
    n_trials: usize,
    eps_grid: &[f64],
    seed: u64,
) -> Result<ConcentrationReport> {
    let (a, b) = family.bounds()?;
    if n_trials == 0 || eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("need trials and a grid of positive ε"));
    }
    let n = g.n();
    if n == 0 {
        return Err(Error::invalid("empty graph"));
    }
    let h = build_hypergraph(g);
    let groups = unique_edges(&h);
    let mu = family.mean();
    let devs: Vec<f64> = (0..n_trials)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let x: Vec<f64> = (0..n).map(|_| family.base.draw(&mut rng)).collect();
            let total: f64 = groups
                .iter()
                .map(|(e, mult)| {
                    let m = e.iter().map(|&v| x[v]).sum::<f64>() / e.len() as f64;
                    m.clamp(a, b) * *mult as f64
                })
                .sum();
            (total / n as f64 - mu).abs()
        })
        .collect();
    let rows = eps_grid
        .iter()
        .map(|&eps| {
            let empirical = devs.iter().filter(|&&d| d >= eps).count() as f64 / n_trials as f64;
            let bound = networked_tail_bound(n, h.omega, b - a, eps);
            let p = bound.min(1.0);
            let se = (p * (1.0 - p) / n_trials as f64).sqrt();
            TailRow { eps, empirical, bound, se, violation: empirical > bound + 3.0 * se }
        })
        .collect();
    Ok(ConcentrationReport { n, omega: h.omega, d_max: g.d_max(), trials: n_trials, a, b, rows })
}

/// `k` evenly spaced points from `lo` to `hi`.
pub fn eps_grid(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1) as f64).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path_graph, ring_graph};

    #[test]
    fn deviation_beyond_range_never_happens() {
        let rep = concentration_check(&path_graph(20), XiFamily::default(), 2000, &[1.01, 2.0], 0).unwrap();
        assert!(rep.rows.iter().all(|r| r.empirical == 0.0 && !r.violation));
    }

    #[test]
    fn edgeless_bernoulli_far_below_bound() {
        let fam = XiFamily { base: BaseDist::Bernoulli, half_width: None };
        let rep = concentration_check(&Graph::empty(400), fam, 10_000, &[0.1], 1).unwrap();
        let row = &rep.rows[0];
        assert!((row.bound - (-2.0f64).exp()).abs() < 1e-12);
        // normal approximation: 2Φ̄(4) ≈ 6.3e-5
        assert!(row.empirical < 1e-3);
        assert!(!row.violation);
    }

    #[test]
    fn path_grid_has_no_violation() {
        let rep =
            concentration_check(&path_graph(200), XiFamily::default(), 10_000, &eps_grid(0.05, 0.5, 10), 2).unwrap();
        assert_eq!(rep.omega, 5);
        assert_eq!(rep.violations(), 0, "{rep:?}");
    }

    #[test]
    fn unbounded_family_rejected() {
        let fam = XiFamily { base: BaseDist::Gaussian, half_width: None };
        assert!(concentration_check(&ring_graph(5), fam, 10, &[0.1], 0).is_err());
        let clipped = XiFamily { base: BaseDist::Gaussian, half_width: Some(1.0) };
        assert_eq!(clipped.bounds().unwrap(), (-1.0, 1.0));
        assert!(concentration_check(&ring_graph(5), clipped, 10, &[0.1], 0).is_ok());
    }

    #[test]
    fn independent_of_thread_count() {
        let g = ring_graph(50);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| concentration_check(&g, XiFamily::default(), 500, &[0.02, 0.05], 7).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn grid_endpoints() {
        let g = eps_grid(0.05, 0.5, 10);
        assert_eq!(g.len(), 10);
        assert_eq!(g[0], 0.05);
        assert!((g[9] - 0.5).abs() < 1e-15);
    }
}
