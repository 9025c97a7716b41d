use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimators::{Arm, EstimatorModel};
use crate::graph::{Graph, GraphOps};
use crate::numkit::{gumbel_softmax, Matrix, Tape, Var};
use crate::synthgen::{Dataset, Spillover};

fn check_policy(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::shape(format!("policy over {} nodes, graph has {n}", pi.len())));
    }
    if pi.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::invalid("policy values must lie in [0, 1]"));
    }
    Ok(())
}

/// Empirical utility with true effects: mean of (2π_i − 1)(τ_i + δ_i(π)),
/// the spillover recomputed under π.
pub fn utility_true(pi: &[f64], tau: &[f64], spill: &Spillover) -> Result<f64> {
    check_policy(pi, spill.n())?;
    let delta = spill.apply(pi, tau)?;
    Ok(pi.iter().zip(tau).zip(&delta).map(|((p, t), d)| (2.0 * p - 1.0) * (t + d)).sum::<f64>() / pi.len() as f64)
}

/// Capacity-capped utility: the treat weight is scaled by
/// min{1, p_t / P(π)} with P(π) the mean of π. P(π) = 0 gives factor 1.
pub fn utility_capped(pi: &[f64], tau: &[f64], spill: &Spillover, p_t: f64) -> Result<f64> {
    check_policy(pi, spill.n())?;
    if !(0.0..=1.0).contains(&p_t) {
        return Err(Error::invalid(format!("capacity must lie in [0, 1], got {p_t}")));
    }
    let rate = pi.iter().sum::<f64>() / pi.len() as f64;
    let factor = if rate > 0.0 { (p_t / rate).min(1.0) } else { 1.0 };
    let delta = spill.apply(pi, tau)?;
    Ok(pi.iter().zip(tau).zip(&delta).map(|((p, t), d)| (2.0 * factor * p - 1.0) * (t + d)).sum::<f64>()
        / pi.len() as f64)
}

/// Ground-truth effects and spillover simulator of a synthetic dataset.
#[derive(Debug, Clone)]
pub struct TrueWorld {
    pub tau: Vec<f64>,
    pub spill: Spillover,
}

impl TrueWorld {
    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        let truth = data.truth()?;
        let cfg = data.config.as_ref().ok_or(Error::MissingTruth)?;
        Ok(Self { tau: truth.tau.clone(), spill: Spillover::new(&data.graph, cfg.alpha, cfg.order())? })
    }

    pub fn utility(&self, pi: &[f64]) -> Result<f64> {
        utility_true(pi, &self.tau, &self.spill)
    }

    pub fn utility_capped(&self, pi: &[f64], p_t: f64) -> Result<f64> {
        utility_capped(pi, &self.tau, &self.spill, p_t)
    }
}

/// Plug-in utility through a frozen estimator. τ̂ comes from the ITE
/// readout. δ̂_i(π) is the treated head at unit i treated with neighbors
/// assigned by π, minus the same with no neighbor treated, so δ̂(0) = 0.
/// The unit's own mask is held at 1 whatever π_i is, since the treated head
/// only ever saw treated rows. Both in original outcome units.
pub struct PlugInUtility<'a> {
    pub model: &'a EstimatorModel,
    pub ops: GraphOps<f64>,
    pub phi: Matrix<f64>,
    pub tau_hat: Vec<f64>,
    /// Standardized h1 output with only the unit itself treated.
    pub h1_empty: Vec<f64>,
}

impl<'a> PlugInUtility<'a> {
    pub fn new(model: &'a EstimatorModel, graph: &Graph, x: &Matrix<f64>) -> Result<Self> {
        if graph.n() != x.rows() {
            return Err(Error::shape(format!("{} covariate rows for {} nodes", x.rows(), graph.n())));
        }
        let tau_hat = model.extract_ite(x)?;
        let ops = graph.operators();
        let mut tape = Tape::new();
        let vars = model.params.attach(&mut tape, false);
        let xv = tape.constant(x.clone());
        let phi = model.phi_forward::<ChaCha8Rng>(&mut tape, &vars, xv, None)?;
        let phi = tape.value(phi).clone();
        let mut plug = Self { model, ops, phi, tau_hat, h1_empty: Vec::new() };
        let zero = tape.constant(Matrix::zeros(x.rows(), 1));
        let h1 = plug.treated_head(&mut tape, &vars, zero)?;
        plug.h1_empty = tape.value(h1).data().to_vec();
        Ok(plug)
    }

    /// Standardized h1 at neighbor assignment π, own mask held at 1.
    fn treated_head(&self, tape: &mut Tape<f64>, est_vars: &[Var], pi: Var) -> Result<Var> {
        let m = self.model;
        let phi = tape.constant(self.phi.clone());
        let masked = tape.scale_rows(phi, pi)?;
        let z = m.gnn_forward_own(tape, est_vars, phi, masked, &self.ops)?;
        let inp = if m.cfg.use_exposure {
            let g = tape.spmm(&self.ops.mean_neighbors, pi)?;
            tape.concat_cols(&[phi, z, g])?
        } else {
            tape.concat_cols(&[phi, z])?
        };
        m.head_forward::<ChaCha8Rng>(tape, est_vars, Arm::Treated, inp, None)
    }

    pub fn n(&self) -> usize {
        self.tau_hat.len()
    }

    /// δ̂(π) as an n x 1 tape value; `est_vars` are the frozen estimator
    /// parameters attached to `tape`.
    pub fn delta_hat_on_tape(&self, tape: &mut Tape<f64>, est_vars: &[Var], pi: Var) -> Result<Var> {
        let h1 = self.treated_head(tape, est_vars, pi)?;
        let base = tape.constant(Matrix::column(&self.h1_empty));
        let d = tape.sub(h1, base)?;
        tape.scale(d, self.model.y_std)
    }

    /// Ŝ(π) = mean of (2π_i − 1)(τ̂_i + δ̂_i(π)) for an n x 1 assignment var.
    pub fn utility_on_tape(&self, tape: &mut Tape<f64>, est_vars: &[Var], pi: Var) -> Result<Var> {
        if tape.value(pi).shape() != (self.n(), 1) {
            return Err(Error::shape(format!("assignment {:?} for {} nodes", tape.value(pi).shape(), self.n())));
        }
        let delta = self.delta_hat_on_tape(tape, est_vars, pi)?;
        let tau = tape.constant(Matrix::column(&self.tau_hat));
        let effect = tape.add(tau, delta)?;
        let sign = tape.affine(pi, 2.0, -1.0)?;
        let prod = tape.mul(sign, effect)?;
        tape.mean(prod)
    }

    /// Relaxed draw from `probs` with frozen Gumbel `noise`, then Ŝ.
    pub fn utility_est(
        &self,
        tape: &mut Tape<f64>,
        est_vars: &[Var],
        probs: Var,
        noise: &[f64],
        temperature: f64,
        hard: bool,
    ) -> Result<Var> {
        let pi = gumbel_softmax(tape, probs, noise, temperature, hard)?;
        self.utility_on_tape(tape, est_vars, pi)
    }

    /// Ŝ for a fixed assignment.
    pub fn utility(&self, pi: &[f64]) -> Result<f64> {
        check_policy(pi, self.n())?;
        let mut tape = Tape::new();
        let vars = self.model.params.attach(&mut tape, false);
        let p = tape.constant(Matrix::column(pi));
        let s = self.utility_on_tape(&mut tape, &vars, p)?;
        Ok(tape.scalar(s))
    }

    pub fn delta_hat(&self, pi: &[f64]) -> Result<Vec<f64>> {
        check_policy(pi, self.n())?;
        let mut tape = Tape::new();
        let vars = self.model.params.attach(&mut tape, false);
        let p = tape.constant(Matrix::column(pi));
        let d = self.delta_hat_on_tape(&mut tape, &vars, p)?;
        Ok(tape.value(d).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::path_graph;

    fn spill(g: &Graph, alpha: f64) -> Spillover {
        Spillover::new(g, alpha, 1).unwrap()
    }

    #[test]
    fn no_interference_all_treated() {
        let g = path_graph(5);
        let s = utility_true(&[1.0; 5], &[0.7; 5], &spill(&g, 0.0)).unwrap();
        assert!((s - 0.7).abs() < 1e-15);
    }

    #[test]
    fn nobody_treated() {
        let g = path_graph(5);
        let s = utility_true(&[0.0; 5], &[0.7; 5], &spill(&g, 0.5)).unwrap();
        assert!((s + 0.7).abs() < 1e-15);
    }

    #[test]
    fn path_hand_value() {
        // δ_0 = 0.5·τ_1·0 = 0, δ_1 = 0.5·(τ_0 + τ_2)/2 = 0.75, δ_2 = 0
        let g = path_graph(3);
        let tau = [1.0, 2.0, 2.0];
        let s = utility_true(&[1.0, 0.0, 1.0], &tau, &spill(&g, 0.5)).unwrap();
        let want = ((1.0 + 0.0) - (2.0 + 0.75) + (2.0 + 0.0)) / 3.0;
        assert!((s - want).abs() < 1e-15, "{s} vs {want}");
    }

    #[test]
    fn linear_in_tau_without_spillover() {
        let g = path_graph(4);
        let pi = [1.0, 0.0, 0.0, 1.0];
        let tau = [0.3, -1.0, 2.0, 0.5];
        let scaled: Vec<f64> = tau.iter().map(|t| 3.0 * t).collect();
        let sp = spill(&g, 0.8);
        let a = utility_true(&pi, &tau, &sp).unwrap();
        let b = utility_true(&pi, &scaled, &sp).unwrap();
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn capped_cases() {
        let g = path_graph(4);
        let sp = spill(&g, 0.0);
        let tau = [0.5, 1.0, -0.5, 2.0];
        let pi = [1.0, 0.0, 0.0, 0.0];
        assert_eq!(utility_capped(&pi, &tau, &sp, 0.5).unwrap(), utility_true(&pi, &tau, &sp).unwrap());
        // P(π) = 1 = 2 p_t: weight 2·0.5·1 − 1 = 0
        assert_eq!(utility_capped(&[1.0; 4], &[1.3; 4], &sp, 0.5).unwrap(), 0.0);
        let s = utility_capped(&[0.0; 4], &tau, &spill(&g, 0.5), 0.3).unwrap();
        assert!((s + tau.iter().sum::<f64>() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn bad_policies_rejected() {
        let g = path_graph(3);
        let sp = spill(&g, 0.5);
        assert!(utility_true(&[1.0, 0.0], &[1.0; 3], &sp).is_err());
        assert!(utility_true(&[1.5, 0.0, 0.0], &[1.0; 3], &sp).is_err());
        assert!(utility_capped(&[1.0; 3], &[1.0; 3], &sp, 1.5).is_err());
    }
}
