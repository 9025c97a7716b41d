//! Undirected simple graphs and the fixed aggregation operators derived from them.

mod io;
mod knn;

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::matrix::SparseMatrix;
use crate::scalar::Scalar;

pub use io::{load_edge_list, parse_edge_list, write_edge_list};
pub use knn::{build_knn_graph, Metric};

/// Immutable undirected graph without self-loops or parallel edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    adj: Vec<Vec<usize>>,
}

impl Graph {
    pub fn empty(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    /// Symmetrizes and deduplicates `edges`; self-loops are dropped and counted.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<(Self, usize)> {
        let mut sets = vec![BTreeSet::new(); n];
        let mut loops = 0;
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::invalid(format!("edge ({i}, {j}) outside 0..{n}")));
            }
            if i == j {
                loops += 1;
                continue;
            }
            sets[i].insert(j);
            sets[j].insert(i);
        }
        let adj = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        Ok((Self { adj }, loops))
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.adj.iter().map(Vec::len).collect()
    }

    pub fn d_max(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn num_edges(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, sorted.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.adj.iter().enumerate().flat_map(|(i, ns)| ns.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    fn check_node(&self, i: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::invalid(format!("node {i} out of range 0..{}", self.n())));
        }
        Ok(())
    }

    /// Nodes at distance exactly two, sorted.
    pub fn two_hop(&self, i: usize) -> Result<Vec<usize>> {
        self.check_node(i)?;
        let mut out = BTreeSet::new();
        for &j in &self.adj[i] {
            for &k in &self.adj[j] {
                if k != i && !self.has_edge(i, k) {
                    out.insert(k);
                }
            }
        }
        Ok(out.into_iter().collect())
    }

    /// Two-hop neighborhoods for every node.
    pub fn two_hop_all(&self) -> Vec<Vec<usize>> {
        (0..self.n()).map(|i| self.two_hop(i).expect("in range")).collect()
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n() {
            return Err(Error::invalid("permutation length differs from node count"));
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Ok(Self::from_edges(self.n(), edges)?.0)
    }

    /// D̂^{-1/2} (A + I) D̂^{-1/2} with d̂_i = 1 + deg(i).
    pub fn normalized_adjacency<F: Scalar>(&self) -> NormAdjacency<F> {
        let inv_sqrt: Vec<F> =
            self.adj.iter().map(|ns| F::one() / F::from_usize(ns.len() + 1).unwrap().sqrt()).collect();
        let rows = self
            .adj
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                let mut r = Vec::with_capacity(ns.len() + 1);
                r.push((i, inv_sqrt[i] * inv_sqrt[i]));
                r.extend(ns.iter().map(|&j| (j, inv_sqrt[i] * inv_sqrt[j])));
                r
            })
            .collect();
        NormAdjacency(SparseMatrix::from_row_lists(self.n(), rows))
    }

    /// Row-averaging operator over N(i), optionally including i itself.
    /// Rows of isolated nodes are empty when `include_self` is false.
    pub fn mean_operator<F: Scalar>(&self, include_self: bool) -> SparseMatrix<F> {
        let rows = self
            .adj
            .iter()
            .enumerate()
            .map(|(i, ns)| {
                let count = ns.len() + usize::from(include_self);
                if count == 0 {
                    return Vec::new();
                }
                let w = F::one() / F::from_usize(count).unwrap();
                let mut r: Vec<_> = ns.iter().map(|&j| (j, w)).collect();
                if include_self {
                    r.push((i, w));
                }
                r
            })
            .collect();
        SparseMatrix::from_row_lists(self.n(), rows)
    }

    /// Fraction of treated neighbors; 0 for isolated nodes.
    pub fn exposure(&self, treatment: &[f64]) -> Result<Vec<f64>> {
        if treatment.len() != self.n() {
            return Err(Error::shape(format!("{} treatments for {} nodes", treatment.len(), self.n())));
        }
        Ok(self
            .adj
            .iter()
            .map(|ns| if ns.is_empty() { 0.0 } else { ns.iter().map(|&j| treatment[j]).sum::<f64>() / ns.len() as f64 })
            .collect())
    }

    pub fn operators<F: Scalar>(&self) -> GraphOps<F> {
        GraphOps {
            norm: Arc::new(self.normalized_adjacency().0),
            mean_with_self: Arc::new(self.mean_operator(true)),
            mean_neighbors: Arc::new(self.mean_operator(false)),
        }
    }

    pub fn summary(&self) -> GraphSummary {
        let degs = self.degrees();
        let mean = if degs.is_empty() { 0.0 } else { degs.iter().sum::<usize>() as f64 / degs.len() as f64 };
        GraphSummary { n: self.n(), edges: self.num_edges(), d_max: self.d_max(), mean_degree: mean }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n: usize,
    pub edges: usize,
    pub d_max: usize,
    pub mean_degree: f64,
}

/// Symmetric normalized adjacency with self-loops, stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdjacency<F>(pub SparseMatrix<F>);

impl<F: Scalar> NormAdjacency<F> {
    pub fn matrix(&self) -> &SparseMatrix<F> {
        &self.0
    }
}

/// Precomputed aggregation operators shared by all GNN layers on one graph.
#[derive(Debug, Clone)]
pub struct GraphOps<F> {
    pub norm: Arc<SparseMatrix<F>>,
    pub mean_with_self: Arc<SparseMatrix<F>>,
    pub mean_neighbors: Arc<SparseMatrix<F>>,
}

impl<F: Scalar> GraphOps<F> {
    pub fn n(&self) -> usize {
        self.norm.rows()
    }
}

/// Path 0 - 1 - ... - (n-1).
pub fn path_graph(n: usize) -> Graph {
    Graph::from_edges(n, (1..n).map(|i| (i - 1, i))).expect("valid").0
}

pub fn ring_graph(n: usize) -> Graph {
    let edges = (0..n).map(|i| (i, (i + 1) % n)).filter(|(a, b)| a != b);
    Graph::from_edges(n, edges).expect("valid").0
}

/// Star with center 0 and leaves 1..n.
pub fn star_graph(n: usize) -> Graph {
    Graph::from_edges(n, (1..n).map(|i| (0, i))).expect("valid").0
}

pub fn complete_graph(n: usize) -> Graph {
    let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
    Graph::from_edges(n, edges).expect("valid").0
}

/// Uniformly paired random d-regular graph (pairing model with restarts).
pub fn random_regular_graph<R: rand::Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Result<Graph> {
    use rand::seq::SliceRandom;
    if d >= n || !(n * d).is_multiple_of(2) {
        return Err(Error::invalid(format!("no {d}-regular graph on {n} nodes")));
    }
    for _ in 0..10_000 {
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, d)).collect();
        stubs.shuffle(rng);
        let mut seen = BTreeSet::new();
        let mut ok = true;
        for pair in stubs.chunks(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !seen.insert((a, b)) {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(Graph::from_edges(n, seen)?.0);
        }
    }
    Err(Error::invalid("random regular pairing did not converge"))
}

/// Erdős–Rényi G(n, p).
pub fn random_graph<R: rand::Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Graph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, edges).expect("valid").0
}
