use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::GnnLayerIds;
use crate::graph::GraphOps;
use crate::numkit::{onegnn_layer, Linear, Matrix, Mlp, Params, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    /// Dense network on each node's covariates alone.
    #[default]
    Mlp,
    /// 1-GNN layers over the covariate graph, then a sigmoid readout.
    OneGnn,
}

/// Maps covariates to per-node treatment probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub kind: PolicyKind,
    pub input_dim: usize,
    pub params: Params<f64>,
    pub mlp: Mlp,
    pub gnn: Vec<GnnLayerIds>,
    pub out: Option<Linear>,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(kind: PolicyKind, input_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::invalid("policy widths must be positive"));
        }
        let mut params = Params::new();
        match kind {
            PolicyKind::Mlp => {
                let mut dims = vec![input_dim];
                dims.extend(hidden);
                dims.push(1);
                let mlp = Mlp::build(&mut params, "policy", &dims, rng);
                Ok(Self { kind, input_dim, params, mlp, gnn: Vec::new(), out: None })
            }
            PolicyKind::OneGnn => {
                let mut gnn = Vec::new();
                let mut prev = input_dim;
                for (i, &d) in hidden.iter().enumerate() {
                    let w = params.add_glorot(format!("policy.gnn.{i}.w"), prev, d, rng);
                    let w2 = params.add_glorot(format!("policy.gnn.{i}.w2"), prev, d, rng);
                    gnn.push(GnnLayerIds { w, w2: Some(w2) });
                    prev = d;
                }
                let out = Linear {
                    w: params.add_glorot("policy.out.w", prev, 1, rng),
                    b: params.add_zeros("policy.out.b", 1, 1),
                };
                Ok(Self { kind, input_dim, params, mlp: Mlp { layers: Vec::new() }, gnn, out: Some(out) })
            }
        }
    }

    /// n x 1 treatment probabilities.
    pub fn forward(&self, tape: &mut Tape<f64>, vars: &[Var], x: Var, ops: &GraphOps<f64>) -> Result<Var> {
        if tape.value(x).cols() != self.input_dim {
            return Err(Error::shape(format!(
                "{} covariates, policy expects {}",
                tape.value(x).cols(),
                self.input_dim
            )));
        }
        let logits = match self.kind {
            PolicyKind::Mlp => self.mlp.forward::<f64, rand_chacha::ChaCha8Rng>(tape, vars, x, false, 0.0, None)?,
            PolicyKind::OneGnn => {
                let mut h = x;
                for l in &self.gnn {
                    h = onegnn_layer(tape, h, ops, vars[l.w.0], vars[l.w2.expect("1-GNN weight").0], true)?;
                }
                self.out.expect("readout layer").forward(tape, vars, h)?
            }
        };
        tape.sigmoid(logits)
    }

    pub fn probabilities(&self, x: &Matrix<f64>, ops: &GraphOps<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let xv = tape.constant(x.clone());
        let p = self.forward(&mut tape, &vars, xv, ops)?;
        Ok(tape.value(p).data().to_vec())
    }
}
