use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, GraphOps};
use crate::numkit::{
    gcn_layer, hsic, onegnn_layer, sage_layer, Bandwidth, GnnKind, Matrix, Mlp, ParamId, Params, ParamsDocument, Tape,
    Var,
};

/// Which representation enters the HSIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BalanceTarget {
    #[default]
    Phi,
    Gnn,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub gnn: GnnKind,
    /// Widths of the Φ layers; the last one is the representation size.
    pub phi_dims: Vec<usize>,
    /// Widths of the graph layers; the last one is the size of Z.
    pub gnn_dims: Vec<usize>,
    /// Hidden widths of each outcome head (output width 1 is implied).
    pub head_dims: Vec<usize>,
    pub kappa: f64,
    pub balance: BalanceTarget,
    pub bandwidth: Bandwidth,
    /// Feed the exposure G_i to the heads.
    pub use_exposure: bool,
    /// ITE readout with the literal zero vector for Z; otherwise Z is the
    /// graph stack applied to the node alone (edgeless graph, treated).
    pub zero_z_ite: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            gnn: GnnKind::Sage,
            phi_dims: vec![64, 64],
            gnn_dims: vec![128, 32],
            head_dims: vec![64, 32],
            kappa: 0.0,
            balance: BalanceTarget::Phi,
            bandwidth: Bandwidth::Auto,
            use_exposure: true,
            zero_z_ite: true,
        }
    }
}

impl EstimatorConfig {
    /// All widths divided by `factor` (never below 4).
    pub fn scaled(mut self, factor: usize) -> Self {
        let f = factor.max(1);
        for dims in [&mut self.phi_dims, &mut self.gnn_dims, &mut self.head_dims] {
            dims.iter_mut().for_each(|d| *d = (*d / f).max(4));
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.phi_dims.is_empty() || self.gnn_dims.is_empty() {
            return Err(Error::invalid("Φ and the graph stack need at least one layer each"));
        }
        if !(2..=3).contains(&self.gnn_dims.len()) {
            log::warn!("graph stack with {} layers (2-3 is the usual range)", self.gnn_dims.len());
        }
        if self.phi_dims.iter().chain(&self.gnn_dims).chain(&self.head_dims).any(|&d| d == 0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::invalid(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn head_input_dim(&self) -> usize {
        self.phi_dims.last().unwrap() + self.gnn_dims.last().unwrap() + usize::from(self.use_exposure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GnnLayerIds {
    pub w: ParamId,
    /// Neighbor weight of the 1-GNN layer.
    pub w2: Option<ParamId>,
}

/// Φ → masked graph stack → outcome heads h0 / h1.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorModel {
    pub cfg: EstimatorConfig,
    pub input_dim: usize,
    pub params: Params<f64>,
    pub phi: Mlp,
    pub gnn: Vec<GnnLayerIds>,
    pub h0: Mlp,
    pub h1: Mlp,
    /// Outcome standardization learned from the training split.
    pub y_mean: f64,
    pub y_std: f64,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Representation {
    pub phi: Var,
    pub z: Var,
    pub head_in: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arm {
    Control,
    Treated,
}

impl EstimatorModel {
    pub fn new<R: Rng + ?Sized>(cfg: EstimatorConfig, input_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("covariate dimension must be positive"));
        }
        let mut params = Params::new();
        let mut dims = vec![input_dim];
        dims.extend(&cfg.phi_dims);
        let phi = Mlp::build(&mut params, "phi", &dims, rng);

        let mut gnn = Vec::new();
        let mut prev = *cfg.phi_dims.last().unwrap();
        for (i, &d) in cfg.gnn_dims.iter().enumerate() {
            let w = params.add_glorot(format!("gnn.{i}.w"), prev, d, rng);
            let w2 = (cfg.gnn == GnnKind::OneGnn).then(|| params.add_glorot(format!("gnn.{i}.w2"), prev, d, rng));
            gnn.push(GnnLayerIds { w, w2 });
            prev = d;
        }

        let mut hd = vec![cfg.head_input_dim()];
        hd.extend(&cfg.head_dims);
        hd.push(1);
        let h0 = Mlp::build(&mut params, "h0", &hd, rng);
        let h1 = Mlp::build(&mut params, "h1", &hd, rng);
        Ok(Self { cfg, input_dim, params, phi, gnn, h0, h1, y_mean: 0.0, y_std: 1.0 })
    }

    /// Hand-built model whose ITE readout is exactly `intercept + coef·x`
    /// and whose treated head ignores Z and G, so every spillover estimate
    /// is zero. Φ = [relu(x), relu(−x)], h0 ≡ 0, linear heads.
    pub fn with_linear_effect(coef: &[f64], intercept: f64) -> Result<Self> {
        let d = coef.len();
        let cfg = EstimatorConfig {
            gnn: GnnKind::Sage,
            phi_dims: vec![2 * d],
            gnn_dims: vec![2],
            head_dims: vec![],
            ..EstimatorConfig::default()
        };
        let mut m = Self::new(cfg, d, &mut ChaCha8Rng::seed_from_u64(0))?;
        let phi = m.phi.layers[0];
        let mut w = Matrix::zeros(d, 2 * d);
        for k in 0..d {
            w.set(k, k, 1.0);
            w.set(k, d + k, -1.0);
        }
        *m.params.get_mut(phi.w) = w;
        *m.params.get_mut(phi.b) = Matrix::zeros(1, 2 * d);
        let rows = m.cfg.head_input_dim();
        let (l0, l1) = (m.h0.layers[0], m.h1.layers[0]);
        *m.params.get_mut(l0.w) = Matrix::zeros(rows, 1);
        *m.params.get_mut(l0.b) = Matrix::zeros(1, 1);
        let mut w1 = Matrix::zeros(rows, 1);
        for (k, &a) in coef.iter().enumerate() {
            w1.set(k, 0, a);
            w1.set(d + k, 0, -a);
        }
        *m.params.get_mut(l1.w) = w1;
        *m.params.get_mut(l1.b) = Matrix::scalar(intercept);
        Ok(m)
    }

    pub fn head(&self, arm: Arm) -> &Mlp {
        match arm {
            Arm::Control => &self.h0,
            Arm::Treated => &self.h1,
        }
    }

    /// Φ(X) with ReLU on every layer.
    pub fn phi_forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        x: Var,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var> {
        let (rate, rng) = split_dropout(dropout);
        self.phi.forward(tape, vars, x, true, rate, rng)
    }

    /// Graph stack on `h`; every layer but the last is activated.
    pub fn gnn_forward(&self, tape: &mut Tape<f64>, vars: &[Var], h: Var, ops: &GraphOps<f64>) -> Result<Var> {
        let mut h = h;
        let last = self.gnn.len() - 1;
        for (i, l) in self.gnn.iter().enumerate() {
            let act = i < last;
            h = match self.cfg.gnn {
                GnnKind::Gcn => gcn_layer(tape, h, ops, vars[l.w.0], act)?,
                GnnKind::Sage => sage_layer(tape, h, ops, vars[l.w.0], act)?,
                GnnKind::OneGnn => onegnn_layer(tape, h, ops, vars[l.w.0], vars[l.w2.expect("1-GNN weight").0], act)?,
            };
        }
        Ok(h)
    }

    /// Graph stack seen from each node with its own input taken from `own`
    /// and every other row from `masked`. Each layer mixes the node's own
    /// stream with its neighbors' rows of the ordinary pass over `masked`,
    /// so walks that leave a node and come back read the masked input.
    /// Exact for a single layer.
    pub fn gnn_forward_own(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        own: Var,
        masked: Var,
        ops: &GraphOps<f64>,
    ) -> Result<Var> {
        if tape.value(own).shape() != tape.value(masked).shape() {
            return Err(Error::shape("own and masked inputs differ in shape"));
        }
        let (mut s, mut h) = (own, masked);
        let last = self.gnn.len() - 1;
        for (i, l) in self.gnn.iter().enumerate() {
            let act = i < last;
            let w = vars[l.w.0];
            let (s_pre, h_pre) = match self.cfg.gnn {
                GnnKind::Gcn | GnnKind::Sage => {
                    let p = if self.cfg.gnn == GnnKind::Gcn { &ops.norm } else { &ops.mean_with_self };
                    let diag: Vec<f64> = (0..p.rows()).map(|r| p.get(r, r)).collect();
                    let hw = tape.matmul(h, w)?;
                    let agg = tape.spmm(p, hw)?;
                    let diff = tape.sub(s, h)?;
                    let dw = tape.matmul(diff, w)?;
                    let d = tape.constant(Matrix::column(&diag));
                    let own_term = tape.scale_rows(dw, d)?;
                    (tape.add(agg, own_term)?, agg)
                }
                GnnKind::OneGnn => {
                    let w2 = vars[l.w2.expect("1-GNN weight").0];
                    let hw2 = tape.matmul(h, w2)?;
                    let nbr = tape.spmm(&ops.mean_neighbors, hw2)?;
                    let (so, ho) = (tape.matmul(s, w)?, tape.matmul(h, w)?);
                    (tape.add(so, nbr)?, tape.add(ho, nbr)?)
                }
            };
            let mut out = [s_pre, h_pre];
            for v in &mut out {
                if act {
                    *v = tape.relu(*v)?;
                }
                if self.cfg.gnn == GnnKind::Sage {
                    *v = tape.row_l2_normalize(*v)?;
                }
            }
            (s, h) = (out[0], out[1]);
        }
        Ok(s)
    }

    /// R = Φ(X), Z = GNN(T ⊙ R), head input [R, Z, G]. `t` and `g` are n x 1.
    #[allow(clippy::too_many_arguments)]
    pub fn represent<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        x: Var,
        t: Var,
        g: Var,
        ops: &GraphOps<f64>,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Representation> {
        let n = tape.value(x).rows();
        if tape.value(x).cols() != self.input_dim {
            return Err(Error::shape(format!("{} covariates, model expects {}", tape.value(x).cols(), self.input_dim)));
        }
        if tape.value(t).shape() != (n, 1) || tape.value(g).shape() != (n, 1) || ops.n() != n {
            return Err(Error::shape("treatment, exposure and graph must match the covariate rows"));
        }
        let phi = self.phi_forward(tape, vars, x, dropout)?;
        let masked = tape.scale_rows(phi, t)?;
        let z = self.gnn_forward(tape, vars, masked, ops)?;
        let head_in =
            if self.cfg.use_exposure { tape.concat_cols(&[phi, z, g])? } else { tape.concat_cols(&[phi, z])? };
        Ok(Representation { phi, z, head_in })
    }

    pub fn head_forward<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        arm: Arm,
        input: Var,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<Var> {
        let (rate, rng) = split_dropout(dropout);
        self.head(arm).forward(tape, vars, input, false, rate, rng)
    }

    /// Head input for the empty-graph counterfactual: [Φ(X), Z_∅, 0].
    pub fn empty_graph_input(&self, tape: &mut Tape<f64>, vars: &[Var], phi: Var) -> Result<Var> {
        let n = tape.value(phi).rows();
        let zdim = *self.cfg.gnn_dims.last().unwrap();
        let z = if self.cfg.zero_z_ite {
            tape.constant(Matrix::zeros(n, zdim))
        } else {
            let ops = Graph::empty(n).operators();
            self.gnn_forward(tape, vars, phi, &ops)?
        };
        if self.cfg.use_exposure {
            let g = tape.constant(Matrix::zeros(n, 1));
            tape.concat_cols(&[phi, z, g])
        } else {
            tape.concat_cols(&[phi, z])
        }
    }

    /// Standardized MSE over `rows` routed to the head of each row's arm.
    /// `y_std` holds standardized outcomes for every node (NaN allowed
    /// outside `rows`).
    #[allow(clippy::too_many_arguments)]
    pub fn mse_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        head_in: Var,
        t: &[f64],
        y_std: &[f64],
        rows: &[usize],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::invalid("loss over an empty row set"));
        }
        let mut total: Option<Var> = None;
        for (arm, flag) in [(Arm::Control, 0.0), (Arm::Treated, 1.0)] {
            let idx: Vec<usize> = rows.iter().copied().filter(|&i| t[i] == flag).collect();
            if idx.is_empty() {
                continue;
            }
            let target: Vec<f64> = idx.iter().map(|&i| y_std[i]).collect();
            if target.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("outcome missing for a row used in the loss"));
            }
            let inp = tape.select_rows(head_in, &idx)?;
            let d = dropout.as_mut().map(|(r, g)| (*r, &mut **g));
            let out = self.head_forward(tape, vars, arm, inp, d)?;
            let tgt = tape.constant(Matrix::column(&target));
            let diff = tape.sub(out, tgt)?;
            let sq = tape.square(diff)?;
            let s = tape.sum(sq)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, s)?,
                None => s,
            });
        }
        tape.scale(total.expect("rows nonempty"), 1.0 / rows.len() as f64)
    }

    /// MSE + κ·HSIC(balanced representation rows of `batch`, T).
    #[allow(clippy::too_many_arguments)]
    pub fn loss_on_tape<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<f64>,
        vars: &[Var],
        inputs: &LossInputs<'_>,
        batch: &[usize],
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<LossVars> {
        let x = tape.constant(inputs.x.clone());
        let t = tape.constant(Matrix::column(inputs.t));
        let g = tape.constant(Matrix::column(inputs.g));
        let d = dropout.as_mut().map(|(r, g)| (*r, &mut **g));
        let rep = self.represent(tape, vars, x, t, g, inputs.ops, d)?;
        let mse = self.mse_on_tape(tape, vars, rep.head_in, inputs.t, inputs.y_std, inputs.rows, dropout)?;
        let target = match self.cfg.balance {
            BalanceTarget::Phi => Some(rep.phi),
            BalanceTarget::Gnn => Some(rep.z),
            BalanceTarget::None => None,
        };
        let kappa = inputs.kappa.unwrap_or(self.cfg.kappa);
        match target {
            Some(r) if kappa > 0.0 && batch.len() >= 2 => {
                let rows = tape.select_rows(r, batch)?;
                let tb: Vec<f64> = batch.iter().map(|&i| inputs.t[i]).collect();
                let h = hsic(tape, rows, &tb, self.cfg.bandwidth)?;
                let hk = tape.scale(h, kappa)?;
                let total = tape.add(mse, hk)?;
                Ok(LossVars { total, mse, hsic: Some(h) })
            }
            _ => Ok(LossVars { total: mse, mse, hsic: None }),
        }
    }

    /// Outcome predictions in original units for all nodes under (T, G).
    pub fn predict(&self, x: &Matrix<f64>, t: &[f64], g: &[f64], ops: &GraphOps<f64>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let xv = tape.constant(x.clone());
        let tv = tape.constant(Matrix::column(t));
        let gv = tape.constant(Matrix::column(g));
        let rep = self.represent::<ChaCha8Rng>(&mut tape, &vars, xv, tv, gv, ops, None)?;
        let o0 = self.head_forward::<ChaCha8Rng>(&mut tape, &vars, Arm::Control, rep.head_in, None)?;
        let o1 = self.head_forward::<ChaCha8Rng>(&mut tape, &vars, Arm::Treated, rep.head_in, None)?;
        let (a, b) = (tape.value(o0).data(), tape.value(o1).data());
        Ok(t.iter()
            .enumerate()
            .map(|(i, &ti)| self.y_mean + self.y_std * if ti == 1.0 { b[i] } else { a[i] })
            .collect())
    }

    /// τ̂(X_i) = h1([Φ(X_i), 0, 0]) − h0([Φ(X_i), 0, 0]) in original units.
    pub fn extract_ite(&self, x: &Matrix<f64>) -> Result<Vec<f64>> {
        if x.cols() != self.input_dim {
            return Err(Error::shape(format!("{} covariates, model expects {}", x.cols(), self.input_dim)));
        }
        let mut tape = Tape::new();
        let vars = self.params.attach(&mut tape, false);
        let xv = tape.constant(x.clone());
        let phi = self.phi_forward::<ChaCha8Rng>(&mut tape, &vars, xv, None)?;
        let inp = self.empty_graph_input(&mut tape, &vars, phi)?;
        let o0 = self.head_forward::<ChaCha8Rng>(&mut tape, &vars, Arm::Control, inp, None)?;
        let o1 = self.head_forward::<ChaCha8Rng>(&mut tape, &vars, Arm::Treated, inp, None)?;
        Ok(tape.value(o1).data().iter().zip(tape.value(o0).data()).map(|(a, b)| self.y_std * (a - b)).collect())
    }

    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            format: MODEL_FORMAT.into(),
            config: self.cfg.clone(),
            input_dim: self.input_dim,
            y_mean: self.y_mean,
            y_std: self.y_std,
            params: self.params.to_document(),
        }
    }

    pub fn from_file(file: ModelFile) -> Result<Self> {
        if file.format != MODEL_FORMAT {
            return Err(Error::invalid(format!("unknown model format {:?}", file.format)));
        }
        let mut model = Self::new(file.config, file.input_dim, &mut ChaCha8Rng::seed_from_u64(0))?;
        let params = Params::from_document(&file.params)?;
        if params.len() != model.params.len() {
            return Err(Error::invalid("parameter count does not match the model layout"));
        }
        for k in 0..params.len() {
            let id = ParamId(k);
            if params.name(id) != model.params.name(id) || params.get(id).shape() != model.params.get(id).shape() {
                return Err(Error::invalid(format!("parameter {:?} does not match the model layout", params.name(id))));
            }
        }
        model.params = params;
        model.y_mean = file.y_mean;
        model.y_std = file.y_std;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(&self.to_file())?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_file(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub const MODEL_FORMAT: &str = "netcausal-estimator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub config: EstimatorConfig,
    pub input_dim: usize,
    pub y_mean: f64,
    pub y_std: f64,
    pub params: ParamsDocument,
}

/// Fixed data of one loss evaluation.
pub struct LossInputs<'a> {
    pub x: &'a Matrix<f64>,
    pub t: &'a [f64],
    pub g: &'a [f64],
    pub ops: &'a GraphOps<f64>,
    /// Standardized outcomes, indexed by node.
    pub y_std: &'a [f64],
    /// Rows entering the MSE.
    pub rows: &'a [usize],
    /// Overrides the configured κ (e.g. 0 when an arm is missing).
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub mse: Var,
    pub hsic: Option<Var>,
}

fn split_dropout<R: Rng + ?Sized>(d: Option<(f64, &mut R)>) -> (f64, Option<&mut R>) {
    match d {
        Some((rate, rng)) => (rate, Some(rng)),
        None => (0.0, None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::path_graph;
    use crate::numkit::{grad_check, Linear};

    fn small(kind: GnnKind) -> EstimatorConfig {
        EstimatorConfig {
            gnn: kind,
            phi_dims: vec![5, 4],
            gnn_dims: vec![4, 3],
            head_dims: vec![3],
            ..EstimatorConfig::default()
        }
    }

    fn model(kind: GnnKind, d: usize, seed: u64) -> EstimatorModel {
        EstimatorModel::new(small(kind), d, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn xmat(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    // plain-loop reimplementation of the whole forward pass
    type Dense = Vec<Vec<f64>>;

    fn dense(m: &Matrix<f64>) -> Dense {
        (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
    }

    fn mm(a: &Dense, w: &Matrix<f64>) -> Dense {
        a.iter()
            .map(|row| (0..w.cols()).map(|c| row.iter().enumerate().map(|(k, v)| v * w.get(k, c)).sum()).collect())
            .collect()
    }

    fn relu(a: Dense) -> Dense {
        a.into_iter().map(|r| r.into_iter().map(|v| v.max(0.0)).collect()).collect()
    }

    fn mlp_dense(m: &EstimatorModel, mlp: &Mlp, x: &Dense, activate_last: bool) -> Dense {
        let mut h = x.clone();
        for (i, l) in mlp.layers.iter().enumerate() {
            let b = m.params.get(l.b);
            h = mm(&h, m.params.get(l.w));
            for r in h.iter_mut() {
                for (c, v) in r.iter_mut().enumerate() {
                    *v += b.get(0, c);
                }
            }
            if i + 1 < mlp.layers.len() || activate_last {
                h = relu(h);
            }
        }
        h
    }

    fn oracle(m: &EstimatorModel, g: &Graph, x: &Matrix<f64>, t: &[f64], e: &[f64]) -> Vec<f64> {
        let n = g.n();
        let phi = mlp_dense(m, &m.phi, &dense(x), true);
        let mut h: Dense = phi.iter().zip(t).map(|(r, &ti)| r.iter().map(|v| v * ti).collect()).collect();
        let last = m.gnn.len() - 1;
        for (li, l) in m.gnn.iter().enumerate() {
            let hw = mm(&h, m.params.get(l.w));
            let width = hw[0].len();
            let mut out = vec![vec![0.0; width]; n];
            for i in 0..n {
                let ns = g.neighbors(i);
                match m.cfg.gnn {
                    GnnKind::Gcn => {
                        let di = (ns.len() + 1) as f64;
                        for c in 0..width {
                            out[i][c] = hw[i][c] / di
                                + ns.iter().map(|&j| hw[j][c] / (di * (g.degree(j) + 1) as f64).sqrt()).sum::<f64>();
                        }
                    }
                    GnnKind::Sage => {
                        for c in 0..width {
                            out[i][c] = (hw[i][c] + ns.iter().map(|&j| hw[j][c]).sum::<f64>()) / (ns.len() + 1) as f64;
                        }
                    }
                    GnnKind::OneGnn => {
                        let hw2 = mm(&h, m.params.get(l.w2.unwrap()));
                        for c in 0..width {
                            let nb = if ns.is_empty() {
                                0.0
                            } else {
                                ns.iter().map(|&j| hw2[j][c]).sum::<f64>() / ns.len() as f64
                            };
                            out[i][c] = hw[i][c] + nb;
                        }
                    }
                }
            }
            if li < last {
                out = relu(out);
            }
            if m.cfg.gnn == GnnKind::Sage {
                for r in out.iter_mut() {
                    let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        r.iter_mut().for_each(|v| *v /= norm);
                    }
                }
            }
            h = out;
        }
        let inp: Dense = (0..n).map(|i| [phi[i].clone(), h[i].clone(), vec![e[i]]].concat()).collect();
        let o0 = mlp_dense(m, &m.h0, &inp, false);
        let o1 = mlp_dense(m, &m.h1, &inp, false);
        (0..n).map(|i| m.y_mean + m.y_std * if t[i] == 1.0 { o1[i][0] } else { o0[i][0] }).collect()
    }

    fn offset_biases(m: &mut EstimatorModel) {
        for k in 0..m.params.len() {
            if m.params.name(ParamId(k)).ends_with(".b") {
                let v = m.params.get_mut(ParamId(k));
                v.data_mut().iter_mut().enumerate().for_each(|(j, b)| *b = 0.05 * (j as f64 + 1.0));
            }
        }
    }

    fn last_layer(mlp: &Mlp) -> Linear {
        *mlp.layers.last().unwrap()
    }

    #[test]
    fn zero_final_weights_give_bias() {
        let mut m = model(GnnKind::Sage, 3, 1);
        for (arm, b) in [(Arm::Control, 0.7), (Arm::Treated, -0.3)] {
            let l = last_layer(m.head(arm));
            *m.params.get_mut(l.w) = Matrix::zeros(m.params.get(l.w).rows(), 1);
            *m.params.get_mut(l.b) = Matrix::scalar(b);
        }
        let g = path_graph(5);
        let t = [1.0, 0.0, 1.0, 0.0, 0.0];
        let e = g.exposure(&t).unwrap();
        let y = m.predict(&xmat(5, 3, 2), &t, &e, &g.operators()).unwrap();
        for (yi, ti) in y.iter().zip(t) {
            assert_eq!(*yi, if ti == 1.0 { -0.3 } else { 0.7 });
        }
    }

    #[test]
    fn untreated_graph_gives_zero_z() {
        for kind in [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn] {
            let m = model(kind, 3, 3);
            let g = path_graph(6);
            let x = xmat(6, 3, 4);
            let t = vec![0.0; 6];
            let ops = g.operators();
            let mut tape = Tape::new();
            let vars = m.params.attach(&mut tape, false);
            let (xv, tv) = (tape.constant(x.clone()), tape.constant(Matrix::column(&t)));
            let gv = tape.constant(Matrix::zeros(6, 1));
            let rep = m.represent::<ChaCha8Rng>(&mut tape, &vars, xv, tv, gv, &ops, None).unwrap();
            assert!(tape.value(rep.z).data().iter().all(|&v| v == 0.0));
            let empty = m.empty_graph_input(&mut tape, &vars, rep.phi).unwrap();
            assert_eq!(tape.value(empty), tape.value(rep.head_in));
            let y = m.predict(&x, &t, &[0.0; 6], &ops).unwrap();
            let o = m.head_forward::<ChaCha8Rng>(&mut tape, &vars, Arm::Control, empty, None).unwrap();
            for (a, b) in y.iter().zip(tape.value(o).data()) {
                assert_eq!(*a, *b);
            }
        }
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let g = path_graph(4);
        let t = [1.0, 1.0, 0.0, 1.0];
        let e = g.exposure(&t).unwrap();
        for (s, kind) in [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn].into_iter().enumerate() {
            let mut m = model(kind, 3, 10 + s as u64);
            // nonzero biases so every term of the pipeline is exercised
            offset_biases(&mut m);
            m.y_mean = 1.5;
            m.y_std = 2.0;
            let x = xmat(4, 3, 20 + s as u64);
            let got = m.predict(&x, &t, &e, &g.operators()).unwrap();
            let want = oracle(&m, &g, &x, &t, &e);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{kind:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn heads_only_affect_their_arm() {
        let m = model(GnnKind::Gcn, 3, 5);
        let g = path_graph(6);
        let t = [1.0, 0.0, 0.0, 1.0, 1.0, 0.0];
        let e = g.exposure(&t).unwrap();
        let x = xmat(6, 3, 6);
        let ops = g.operators();
        let base = m.predict(&x, &t, &e, &ops).unwrap();
        for (arm, flag) in [(Arm::Control, 0.0), (Arm::Treated, 1.0)] {
            let mut p = m.clone();
            for l in &p.head(arm).layers.clone() {
                p.params.get_mut(l.w).data_mut().iter_mut().for_each(|v| *v += 0.3);
            }
            let y = p.predict(&x, &t, &e, &ops).unwrap();
            for i in 0..6 {
                if t[i] == flag {
                    assert_ne!(y[i], base[i]);
                } else {
                    assert_eq!(y[i], base[i]);
                }
            }
        }
    }

    #[test]
    fn edgeless_untreated_output_is_row_local() {
        let m = model(GnnKind::Sage, 3, 7);
        let ops = Graph::empty(5).operators();
        let t = [0.0; 5];
        let x = xmat(5, 3, 8);
        let base = m.predict(&x, &t, &[0.0; 5], &ops).unwrap();
        let mut x2 = x.clone();
        for r in 1..5 {
            x2.row_mut(r).iter_mut().for_each(|v| *v = -*v + 0.5);
        }
        let y = m.predict(&x2, &t, &[0.0; 5], &ops).unwrap();
        assert_eq!(y[0], base[0]);
    }

    #[test]
    fn ite_is_row_local() {
        for zero_z in [true, false] {
            let cfg = EstimatorConfig { zero_z_ite: zero_z, ..small(GnnKind::OneGnn) };
            let m = EstimatorModel::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
            let x = xmat(6, 3, 10);
            let base = m.extract_ite(&x).unwrap();
            let perm = [0, 5, 4, 1, 3, 2];
            let xp = x.select_rows(&perm);
            let tau = m.extract_ite(&xp).unwrap();
            assert_eq!(tau[0], base[0]);
            for (k, &src) in perm.iter().enumerate() {
                assert_eq!(tau[k], base[src]);
            }
        }
    }

    #[test]
    fn identical_heads_give_zero_ite() {
        let mut m = model(GnnKind::Gcn, 3, 11);
        let (h0, h1) = (m.h0.clone(), m.h1.clone());
        for (a, b) in h0.layers.iter().zip(&h1.layers) {
            *m.params.get_mut(b.w) = m.params.get(a.w).clone();
            *m.params.get_mut(b.b) = m.params.get(a.b).clone();
        }
        assert!(m.extract_ite(&xmat(7, 3, 12)).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn oracle_heads_reproduce_linear_effect() {
        // Φ = relu(X + 10) = X + 10 on [-1, 1]; linear heads differ by a.
        let cfg = EstimatorConfig { phi_dims: vec![3], head_dims: vec![], ..small(GnnKind::Sage) };
        let mut m = EstimatorModel::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(13)).unwrap();
        let p = m.phi.layers[0];
        *m.params.get_mut(p.w) = Matrix::identity(3);
        *m.params.get_mut(p.b) = Matrix::filled(1, 3, 10.0);
        let a = [0.5, -1.0, 2.0];
        let (l0, l1) = (last_layer(&m.h0), last_layer(&m.h1));
        let w0 = m.params.get(l0.w).clone();
        let mut w1 = w0.clone();
        for (k, ak) in a.iter().enumerate() {
            w1.set(k, 0, w0.get(k, 0) + ak);
        }
        *m.params.get_mut(l1.w) = w1;
        *m.params.get_mut(l1.b) = Matrix::scalar(m.params.get(l0.b).item() - 10.0 * a.iter().sum::<f64>() + 0.25);
        m.y_std = 1.0;
        let x = xmat(8, 3, 14);
        let tau = m.extract_ite(&x).unwrap();
        for (i, v) in tau.iter().enumerate() {
            let want = 0.25 + (0..3).map(|k| a[k] * x.get(i, k)).sum::<f64>();
            assert!((v - want).abs() < 1e-12, "{v} vs {want}");
        }
        let tau_true: Vec<f64> = (0..8).map(|i| 0.25 + (0..3).map(|k| a[k] * x.get(i, k)).sum::<f64>()).collect();
        let rows: Vec<usize> = (0..8).collect();
        let met = super::super::metrics(&tau, &tau, &tau, Some(&tau_true), &rows).unwrap();
        assert!(met.pehe.unwrap() < 1e-24);
    }

    #[test]
    fn linear_effect_constructor() {
        let m = EstimatorModel::with_linear_effect(&[0.5, -2.0], 0.1).unwrap();
        let x = xmat(9, 2, 30);
        let tau = m.extract_ite(&x).unwrap();
        for (i, v) in tau.iter().enumerate() {
            assert!((v - (0.1 + 0.5 * x.get(i, 0) - 2.0 * x.get(i, 1))).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let g = path_graph(8);
        let t = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let e = g.exposure(&t).unwrap();
        let ops = g.operators();
        let x = xmat(8, 3, 15);
        let y: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let rows: Vec<usize> = (0..8).collect();
        for (s, kind) in [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn].into_iter().enumerate() {
            for balance in [BalanceTarget::Phi, BalanceTarget::Gnn] {
                let cfg = EstimatorConfig { kappa: 0.5, balance, bandwidth: Bandwidth::Fixed(1.0), ..small(kind) };
                let mut m = EstimatorModel::new(cfg, 3, &mut ChaCha8Rng::seed_from_u64(16 + s as u64)).unwrap();
                // keep ReLU pre-activations off the kink at zero
                offset_biases(&mut m);
                let inputs = LossInputs { x: &x, t: &t, g: &e, ops: &ops, y_std: &y, rows: &rows, kappa: None };
                let rep = grad_check(&m.params, 1e-6, |tape, vars| {
                    let l = m.loss_on_tape::<ChaCha8Rng>(tape, vars, &inputs, &rows, None)?;
                    assert!(l.hsic.is_some());
                    Ok(l.total)
                })
                .unwrap();
                assert!(rep.max_rel_err < 1e-4, "{kind:?} {balance:?}: {rep:?}");
            }
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = model(GnnKind::OneGnn, 4, 17);
        m.y_mean = 0.123456789;
        m.y_std = 3.3;
        m.save(&path).unwrap();
        let back = EstimatorModel::load(&path).unwrap();
        assert_eq!(back, m);
        let x = xmat(5, 4, 18);
        assert_eq!(back.extract_ite(&x).unwrap(), m.extract_ite(&x).unwrap());
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let m = model(GnnKind::Gcn, 3, 19);
        let g = path_graph(4);
        assert!(m.predict(&xmat(4, 2, 0), &[0.0; 4], &[0.0; 4], &g.operators()).is_err());
        assert!(m.predict(&xmat(5, 3, 0), &[0.0; 5], &[0.0; 5], &g.operators()).is_err());
        assert!(m.extract_ite(&xmat(3, 5, 0)).is_err());
        let mut file = m.to_file();
        file.format = "other".into();
        assert!(EstimatorModel::from_file(file).is_err());
    }

    fn own_view(m: &EstimatorModel, own: &Matrix<f64>, masked: &Matrix<f64>, g: &Graph) -> Matrix<f64> {
        let mut tape = Tape::new();
        let vars = m.params.attach(&mut tape, false);
        let (a, b) = (tape.constant(own.clone()), tape.constant(masked.clone()));
        let z = m.gnn_forward_own(&mut tape, &vars, a, b, &g.operators()).unwrap();
        tape.value(z).clone()
    }

    fn plain(m: &EstimatorModel, h: &Matrix<f64>, g: &Graph) -> Matrix<f64> {
        let mut tape = Tape::new();
        let vars = m.params.attach(&mut tape, false);
        let a = tape.constant(h.clone());
        let z = m.gnn_forward(&mut tape, &vars, a, &g.operators()).unwrap();
        tape.value(z).clone()
    }

    #[test]
    fn own_view_reduces_to_the_plain_pass() {
        let g = crate::graph::star_graph(7);
        let h = xmat(7, 4, 30);
        for kind in [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn] {
            let m = model(kind, 4, 31);
            let (a, b) = (own_view(&m, &h, &h, &g), plain(&m, &h, &g));
            for (p, q) in a.data().iter().zip(b.data()) {
                assert!((p - q).abs() < 1e-14, "{kind:?}");
            }
        }
    }

    #[test]
    fn own_view_single_layer_swaps_one_row() {
        // brute force: for each node, rerun the plain pass with its row swapped in
        let g = path_graph(6);
        let own = xmat(6, 4, 32);
        let mut masked = own.clone();
        for r in [1, 4] {
            for c in 0..4 {
                masked.set(r, c, 0.0);
            }
        }
        for kind in [GnnKind::Gcn, GnnKind::Sage, GnnKind::OneGnn] {
            let cfg = EstimatorConfig { gnn_dims: vec![3], ..small(kind) };
            let m = EstimatorModel::new(cfg, 4, &mut ChaCha8Rng::seed_from_u64(33)).unwrap();
            let got = own_view(&m, &own, &masked, &g);
            for i in 0..6 {
                let mut h = masked.clone();
                for c in 0..4 {
                    h.set(i, c, own.get(i, c));
                }
                let want = plain(&m, &h, &g);
                for c in 0..3 {
                    assert!((got.get(i, c) - want.get(i, c)).abs() < 1e-14, "{kind:?} node {i}");
                }
            }
        }
    }
}
