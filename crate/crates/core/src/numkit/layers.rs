//! Graph layers, dense layers and dropout, expressed as tape primitives.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphOps;
use crate::numkit::matrix::Matrix;
use crate::numkit::params::{ParamId, Params};
use crate::numkit::tape::{Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GnnKind {
    Gcn,
    Sage,
    #[serde(rename = "onegnn")]
    OneGnn,
}

impl GnnKind {
    pub const ALL: [GnnKind; 3] = [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn];

    pub fn name(self) -> &'static str {
        match self {
            GnnKind::Gcn => "gcn",
            GnnKind::Sage => "sage",
            GnnKind::OneGnn => "onegnn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "gcn" => Some(GnnKind::Gcn),
            "sage" | "graphsage" => Some(GnnKind::Sage),
            "onegnn" | "1-gnn" | "1gnn" => Some(GnnKind::OneGnn),
            _ => None,
        }
    }
}

fn check_inner<F: Scalar>(tape: &Tape<F>, h: Var, w: Var, what: &str) -> Result<()> {
    let (hs, ws) = (tape.value(h).shape(), tape.value(w).shape());
    if hs.1 != ws.0 {
        return Err(Error::shape(format!("{what}: features {hs:?} vs weight {ws:?}")));
    }
    Ok(())
}

fn check_rows<F: Scalar>(tape: &Tape<F>, h: Var, ops: &GraphOps<F>) -> Result<()> {
    if tape.value(h).rows() != ops.n() {
        return Err(Error::shape(format!("{} feature rows for {} nodes", tape.value(h).rows(), ops.n())));
    }
    Ok(())
}

/// σ(D̂^{-1/2} Â D̂^{-1/2} H W).
pub fn gcn_layer<F: Scalar>(tape: &mut Tape<F>, h: Var, ops: &GraphOps<F>, w: Var, activate: bool) -> Result<Var> {
    check_inner(tape, h, w, "gcn")?;
    check_rows(tape, h, ops)?;
    let hw = tape.matmul(h, w)?;
    let agg = tape.spmm(&ops.norm, hw)?;
    if activate {
        tape.relu(agg)
    } else {
        Ok(agg)
    }
}

/// Row-wise L2 normalized σ(mean over N(i) ∪ {i} of H_j W).
pub fn sage_layer<F: Scalar>(tape: &mut Tape<F>, h: Var, ops: &GraphOps<F>, w: Var, activate: bool) -> Result<Var> {
    check_inner(tape, h, w, "sage")?;
    check_rows(tape, h, ops)?;
    let hw = tape.matmul(h, w)?;
    let mut agg = tape.spmm(&ops.mean_with_self, hw)?;
    if activate {
        agg = tape.relu(agg)?;
    }
    tape.row_l2_normalize(agg)
}

/// σ(H_i W1 + mean over N(i) of H_j W2); isolated nodes get a zero neighbor term.
pub fn onegnn_layer<F: Scalar>(
    tape: &mut Tape<F>,
    h: Var,
    ops: &GraphOps<F>,
    w1: Var,
    w2: Var,
    activate: bool,
) -> Result<Var> {
    check_inner(tape, h, w1, "onegnn self")?;
    check_inner(tape, h, w2, "onegnn neighbor")?;
    check_rows(tape, h, ops)?;
    let own = tape.matmul(h, w1)?;
    let hw2 = tape.matmul(h, w2)?;
    let nbr = tape.spmm(&ops.mean_neighbors, hw2)?;
    let sum = tape.add(own, nbr)?;
    if activate {
        tape.relu(sum)
    } else {
        Ok(sum)
    }
}

/// Inverted dropout: kept units are scaled by 1 / (1 - rate).
pub fn dropout<F: Scalar, R: Rng + ?Sized>(tape: &mut Tape<F>, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(x);
    }
    if rate >= 1.0 {
        return Err(Error::invalid("dropout rate must be < 1"));
    }
    let (r, c) = tape.value(x).shape();
    let keep = F::lit(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..r * c).map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep }).collect();
    let m = tape.constant(Matrix::from_vec(r, c, mask)?);
    tape.mul(x, m)
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, vars: &[Var], x: Var) -> Result<Var> {
        let xw = tape.matmul(x, vars[self.w.0])?;
        tape.add_row(xw, vars[self.b.0])
    }
}

/// Dense stack with ReLU (and optional dropout) between layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims = [input, hidden..., output]`.
    pub fn build<F: Scalar, R: Rng + ?Sized>(
        params: &mut Params<F>,
        prefix: &str,
        dims: &[usize],
        rng: &mut R,
    ) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear {
                w: params.add_glorot(format!("{prefix}.{i}.w"), w[0], w[1], rng),
                b: params.add_zeros(format!("{prefix}.{i}.b"), 1, w[1]),
            })
            .collect();
        Self { layers }
    }

    pub fn output_dim<F: Scalar>(&self, params: &Params<F>) -> usize {
        self.layers.last().map_or(0, |l| params.get(l.w).cols())
    }

    /// ReLU after every layer except the last unless `activate_last`.
    /// Dropout, when given, is applied after each hidden activation.
    pub fn forward<F: Scalar, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<F>,
        vars: &[Var],
        x: Var,
        activate_last: bool,
        dropout_rate: f64,
        rng: Option<&mut R>,
    ) -> Result<Var> {
        let mut rng = rng;
        let mut h = x;
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, vars, h)?;
            if i < last || activate_last {
                h = tape.relu(h)?;
            }
            if i < last {
                if let Some(r) = rng.as_deref_mut() {
                    h = dropout(tape, h, dropout_rate, r)?;
                }
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;

    fn m(rows: &[Vec<f64>]) -> Matrix<f64> {
        Matrix::from_rows(rows).unwrap()
    }

    fn edge() -> GraphOps<f64> {
        Graph::from_edges(2, [(0, 1)]).unwrap().0.operators()
    }

    #[test]
    fn gcn_examples() {
        let iso = Graph::empty(1).operators::<f64>();
        let mut t = Tape::new();
        let h = t.constant(m(&[vec![2.0, -3.0]]));
        let w = t.constant(Matrix::identity(2));
        let y = gcn_layer(&mut t, h, &iso, w, true).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 0.0]);

        let mut t = Tape::new();
        let h = t.constant(m(&[vec![1.0], vec![3.0]]));
        let w = t.constant(m(&[vec![1.0]]));
        let y = gcn_layer(&mut t, h, &edge(), w, true).unwrap();
        assert!(t.value(y).data().iter().all(|v| (v - 2.0).abs() < 1e-14));

        let w0 = t.constant(Matrix::zeros(1, 3));
        let y0 = gcn_layer(&mut t, h, &edge(), w0, false).unwrap();
        assert!(t.value(y0).data().iter().all(|&v| v == 0.0));

        let bad = t.constant(Matrix::zeros(2, 2));
        assert!(gcn_layer(&mut t, h, &edge(), bad, true).is_err());
    }

    #[test]
    fn sage_examples() {
        let iso = Graph::empty(1).operators::<f64>();
        let mut t = Tape::new();
        let h = t.constant(m(&[vec![3.0, 4.0]]));
        let w = t.constant(Matrix::identity(2));
        let y = sage_layer(&mut t, h, &iso, w, true).unwrap();
        assert!((t.value(y).get(0, 0) - 0.6).abs() < 1e-15);
        assert!((t.value(y).get(0, 1) - 0.8).abs() < 1e-15);

        let z = t.constant(Matrix::zeros(1, 2));
        let y = sage_layer(&mut t, z, &iso, w, true).unwrap();
        assert_eq!(t.value(y).data(), &[0.0, 0.0]);

        let path = crate::graph::path_graph(3).operators::<f64>();
        let same = t.constant(m(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]));
        let y = sage_layer(&mut t, same, &path, w, true).unwrap();
        let v = t.value(y);
        assert_eq!(v.row(0), v.row(1));
        assert_eq!(v.row(1), v.row(2));
    }

    #[test]
    fn onegnn_examples() {
        let mut t = Tape::new();
        let h = t.constant(m(&[vec![1.0], vec![3.0]]));
        let one = t.constant(m(&[vec![1.0]]));
        let y = onegnn_layer(&mut t, h, &edge(), one, one, true).unwrap();
        assert_eq!(t.value(y).data(), &[4.0, 4.0]);

        let zero = t.constant(m(&[vec![0.0]]));
        let y = onegnn_layer(&mut t, h, &edge(), one, zero, false).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 3.0]);

        let iso = Graph::empty(2).operators::<f64>();
        let y = onegnn_layer(&mut t, h, &iso, one, one, false).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 3.0]);
    }

    #[test]
    fn dropout_zero_rate_is_identity() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::<f64>::new();
        let x = t.constant(Matrix::filled(4, 4, 1.0));
        assert_eq!(dropout(&mut t, x, 0.0, &mut rng).unwrap(), x);
        let y = dropout(&mut t, x, 0.5, &mut rng).unwrap();
        assert!(t.value(y).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
