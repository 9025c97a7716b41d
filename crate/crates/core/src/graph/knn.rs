use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    Euclidean,
}

/// Symmetrized k-nearest-neighbor graph. Each node links to its `k` closest
/// rows (ties to the lower index), then the edge set is closed under symmetry.
pub fn build_knn_graph<F: Scalar>(x: &Matrix<F>, k: usize, metric: Metric) -> Result<Graph> {
    let n = x.rows();
    if n < 2 {
        return Err(Error::invalid("kNN graph needs at least two rows"));
    }
    if k == 0 || k >= n {
        return Err(Error::invalid(format!("k = {k} must satisfy 1 <= k < n = {n}")));
    }
    if !x.is_finite() {
        return Err(Error::invalid("covariates contain non-finite values"));
    }
    let norms: Vec<F> = (0..n).map(|i| x.row(i).iter().map(|&v| v * v).sum::<F>().sqrt()).collect();
    if metric == Metric::Cosine {
        if let Some(i) = norms.iter().position(|&v| v == F::zero()) {
            return Err(Error::invalid(format!("row {i} is all zeros; cosine distance undefined")));
        }
    }

    let dist = |i: usize, j: usize| -> F {
        let (a, b) = (x.row(i), x.row(j));
        match metric {
            Metric::Euclidean => a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum(),
            Metric::Cosine => {
                let dot: F = a.iter().zip(b).map(|(&p, &q)| p * q).sum();
                F::one() - dot / (norms[i] * norms[j])
            }
        }
    };

    let mut edges = Vec::with_capacity(n * k);
    let mut cand: Vec<(F, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist(i, j), j)));
        let by_dist =
            |a: &(F, usize), b: &(F, usize)| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1));
        cand.select_nth_unstable_by(k - 1, by_dist);
        edges.extend(cand[..k].iter().map(|&(_, j)| (i, j)));
    }
    Ok(Graph::from_edges(n, edges)?.0)
}
