use crate::error::{Error, Result};
use crate::graph::Graph;

/// Precomputed neighborhoods for repeated spillover evaluation (policy
/// evaluation recomputes δ for many assignments on one graph).
#[derive(Debug, Clone)]
pub struct Spillover {
    first: Vec<Vec<usize>>,
    second: Option<Vec<Vec<usize>>>,
    alpha: f64,
}

impl Spillover {
    pub fn new(g: &Graph, alpha: f64, order: usize) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(Error::invalid(format!("decay alpha must be finite and >= 0, got {alpha}")));
        }
        let second = match order {
            1 => None,
            2 => Some(g.two_hop_all()),
            o => return Err(Error::invalid(format!("spillover order must be 1 or 2, got {o}"))),
        };
        let first = (0..g.n()).map(|i| g.neighbors(i).to_vec()).collect();
        Ok(Self { first, second, alpha })
    }

    pub fn n(&self) -> usize {
        self.first.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn order(&self) -> usize {
        if self.second.is_some() {
            2
        } else {
            1
        }
    }

    pub fn apply(&self, t: &[f64], tau: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        if t.len() != n || tau.len() != n {
            return Err(Error::shape(format!("{} treatments and {} effects for {n} nodes", t.len(), tau.len())));
        }
        let avg = |set: &[usize]| {
            if set.is_empty() {
                0.0
            } else {
                set.iter().map(|&j| t[j] * tau[j]).sum::<f64>() / set.len() as f64
            }
        };
        Ok((0..n)
            .map(|i| {
                let mut d = self.alpha * avg(&self.first[i]);
                if let Some(s) = &self.second {
                    d += self.alpha * self.alpha * avg(&s[i]);
                }
                d
            })
            .collect())
    }
}

/// δ_i = α·mean_{N(i)} T_j τ_j, plus α²·mean over the exact two-hop ring
/// for `order == 2`.
pub fn gen_spillover(g: &Graph, t: &[f64], tau: &[f64], alpha: f64, order: usize) -> Result<Vec<f64>> {
    Spillover::new(g, alpha, order)?.apply(t, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{path_graph, random_graph};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_example() {
        // node 0 with neighbors {1, 2}
        let (g, _) = Graph::from_edges(3, [(0, 1), (0, 2)]).unwrap();
        let d = gen_spillover(&g, &[0.0, 1.0, 0.0], &[0.0, 2.0, 7.0], 0.5, 1).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_cases() {
        let g = path_graph(5);
        let tau = [1.0, -2.0, 3.0, 0.5, 4.0];
        assert!(gen_spillover(&g, &[0.0; 5], &tau, 0.7, 2).unwrap().iter().all(|&v| v == 0.0));
        assert!(gen_spillover(&g, &[1.0; 5], &tau, 0.0, 2).unwrap().iter().all(|&v| v == 0.0));
        assert!(gen_spillover(&g, &[1.0; 4], &tau, 0.5, 1).is_err());
        assert!(gen_spillover(&g, &[1.0; 5], &tau, 0.5, 3).is_err());
        assert!(gen_spillover(&g, &[1.0; 5], &tau, -0.5, 1).is_err());
    }

    #[test]
    fn second_order_on_path() {
        // path 0-1-2-3-4, node 0: N = {1}, N2 = {2}
        let g = path_graph(5);
        let tau = [1.0, 2.0, 3.0, 4.0, 5.0];
        let d = gen_spillover(&g, &[1.0; 5], &tau, 0.5, 2).unwrap();
        assert!((d[0] - (0.5 * 2.0 + 0.25 * 3.0)).abs() < 1e-15);
        // node 2: N = {1,3}, N2 = {0,4}
        assert!((d[2] - (0.5 * 3.0 + 0.25 * 3.0)).abs() < 1e-15);
    }

    #[test]
    fn locality() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_graph(30, 0.08, &mut rng);
        let tau: Vec<f64> = (0..30).map(|_| rng.random_range(-2.0..2.0)).collect();
        let t: Vec<f64> = (0..30).map(|_| f64::from(rng.random_bool(0.5))).collect();
        for order in [1, 2] {
            let base = gen_spillover(&g, &t, &tau, 0.6, order).unwrap();
            for j in 0..30 {
                let mut t2 = t.clone();
                t2[j] = 1.0 - t2[j];
                let d2 = gen_spillover(&g, &t2, &tau, 0.6, order).unwrap();
                let reach: Vec<usize> = if order == 1 { vec![] } else { g.two_hop(j).unwrap() };
                for i in 0..30 {
                    let near = g.has_edge(i, j) || reach.contains(&i);
                    if !near {
                        assert_eq!(base[i], d2[i], "node {i} moved when flipping {j}");
                    }
                }
            }
        }
    }

    #[test]
    fn lipschitz_in_treatment() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let g = random_graph(25, 0.15, &mut rng);
            let tau: Vec<f64> = (0..25).map(|_| rng.random_range(-3.0..3.0)).collect();
            let a: Vec<f64> = (0..25).map(|_| rng.random()).collect();
            let b: Vec<f64> = (0..25).map(|_| rng.random()).collect();
            let alpha = rng.random_range(0.0..1.0);
            let da = gen_spillover(&g, &a, &tau, alpha, 1).unwrap();
            let db = gen_spillover(&g, &b, &tau, alpha, 1).unwrap();
            let m1 = tau.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let dt = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            for i in 0..25 {
                assert!((da[i] - db[i]).abs() <= alpha * m1 * dt + 1e-12);
            }
        }
    }
}
