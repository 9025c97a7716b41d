use serde::Serialize;

use crate::graph::Graph;

/// Dependence hypergraph: one hyperedge {i} ∪ N(i) ∪ N²(i) per node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hypergraph {
    /// Sorted vertex lists, indexed by their center node.
    pub edges: Vec<Vec<usize>>,
    /// Largest number of hyperedges containing a single vertex.
    pub omega: usize,
}

impl Hypergraph {
    pub fn n(&self) -> usize {
        self.edges.len()
    }

    pub fn max_edge_size(&self) -> usize {
        self.edges.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Number of hyperedges containing each vertex.
    pub fn memberships(&self) -> Vec<usize> {
        let mut count = vec![0; self.n()];
        for e in &self.edges {
            for &v in e {
                count[v] += 1;
            }
        }
        count
    }
}

pub fn build_hypergraph(g: &Graph) -> Hypergraph {
    let edges: Vec<Vec<usize>> = (0..g.n())
        .map(|i| {
            let mut e = vec![i];
            for &j in g.neighbors(i) {
                e.push(j);
                e.extend_from_slice(g.neighbors(j));
            }
            e.sort_unstable();
            e.dedup();
            e
        })
        .collect();
    let mut h = Hypergraph { edges, omega: 0 };
    h.omega = h.memberships().into_iter().max().unwrap_or(0);
    h
}
