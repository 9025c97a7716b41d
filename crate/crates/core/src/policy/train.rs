use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{PolicyKind, PolicyNet};
use super::utility::{PlugInUtility, TrueWorld};
use crate::error::{Error, Result};
use crate::estimators::EstimatorModel;
use crate::numkit::{gumbel_noise, Adam, AdamConfig, Tape, Var};
use crate::synthgen::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub hidden: Vec<usize>,
    /// Capacity: fraction of nodes that may be treated.
    pub p_t: f64,
    /// Constraint weights tried in ascending order.
    pub gamma_grid: Vec<f64>,
    pub epochs: usize,
    pub lr: f64,
    /// Gumbel-softmax temperature.
    pub temperature: f64,
    /// Straight-through hard samples in the forward pass.
    pub hard: bool,
    /// Accepted |treated rate − p_t|.
    pub tolerance: f64,
    /// Bernoulli draws used to measure the treated rate.
    pub rate_draws: usize,
    /// Assignments averaged when evaluating a policy's utility.
    pub utility_draws: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Mlp,
            hidden: vec![64, 32],
            p_t: 0.3,
            gamma_grid: vec![5.0, 50.0, 100.0, 200.0, 500.0],
            epochs: 2000,
            lr: 1e-3,
            temperature: 0.5,
            hard: true,
            tolerance: 0.01,
            rate_draws: 1000,
            utility_draws: 50,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_t > 0.0 && self.p_t < 1.0) {
            return Err(Error::invalid(format!("capacity p_t must lie in (0, 1), got {}", self.p_t)));
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(*g >= 0.0)) {
            return Err(Error::invalid("gamma grid must be a nonempty list of nonnegative weights"));
        }
        if self.epochs == 0 || !(self.lr > 0.0) || !(self.temperature > 0.0) {
            return Err(Error::invalid("epochs, lr and temperature must be positive"));
        }
        if self.rate_draws == 0 || self.utility_draws == 0 {
            return Err(Error::invalid("draw counts must be positive"));
        }
        Ok(())
    }
}

/// A trained capacity-constrained policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub cfg: PolicyConfig,
    pub net: PolicyNet,
    pub gamma: f64,
    /// |treated rate − p_t| measured after training.
    pub residual: f64,
}

impl PolicyModel {
    pub fn probabilities(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.net.probabilities(&data.x, &data.graph.operators())
    }
}

/// L_pol = −Ŝ(π) + γ·|mean π(X) − p_t| on one tape.
#[allow(clippy::too_many_arguments)]
pub fn policy_loss_on_tape(
    tape: &mut Tape<f64>,
    net: &PolicyNet,
    policy_vars: &[Var],
    plug: &PlugInUtility<'_>,
    est_vars: &[Var],
    x: Var,
    noise: &[f64],
    gamma: f64,
    cfg: &PolicyConfig,
) -> Result<Var> {
    let probs = net.forward(tape, policy_vars, x, &plug.ops)?;
    let s = plug.utility_est(tape, est_vars, probs, noise, cfg.temperature, cfg.hard)?;
    let rate = tape.mean(probs)?;
    let gap = tape.affine(rate, 1.0, -cfg.p_t)?;
    let gap = tape.abs(gap)?;
    let pen = tape.scale(gap, gamma)?;
    let neg = tape.scale(s, -1.0)?;
    tape.add(neg, pen)
}

/// Mean over `draws` Bernoulli assignments of the treated fraction.
pub fn treated_rate<R: Rng + ?Sized>(probs: &[f64], draws: usize, rng: &mut R) -> f64 {
    let mut total = 0.0;
    for _ in 0..draws {
        total += probs.iter().filter(|&&p| rng.random_bool(p.clamp(0.0, 1.0))).count() as f64;
    }
    total / (draws * probs.len()) as f64
}

fn fit_one(plug: &PlugInUtility<'_>, data: &Dataset, cfg: &PolicyConfig, gamma: f64, seed: u64) -> Result<PolicyNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = PolicyNet::new(cfg.kind, data.x.cols(), &cfg.hidden, &mut rng)?;
    let mut adam = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() }, &net.params)?;
    let mut tape = Tape::new();
    for epoch in 1..=cfg.epochs {
        tape.reset();
        let noise: Vec<f64> = gumbel_noise(data.n(), &mut rng);
        let vars = net.params.attach(&mut tape, true);
        let est_vars = plug.model.params.attach(&mut tape, false);
        let x = tape.constant(data.x.clone());
        let loss = policy_loss_on_tape(&mut tape, &net, &vars, plug, &est_vars, x, &noise, gamma, cfg)?;
        if !tape.scalar(loss).is_finite() {
            return Err(Error::Diverged { epoch, last_finite: epoch.checked_sub(1).filter(|&e| e > 0) });
        }
        tape.backward(loss)?;
        let grads = net.params.collect_grads(&tape, &vars);
        adam.step(&mut net.params, &grads)?;
    }
    Ok(net)
}

/// Trains a fresh policy for each γ of the grid in ascending order and
/// returns the first one whose treated rate is within tolerance of p_t.
pub fn train_policy(est: &EstimatorModel, data: &Dataset, cfg: &PolicyConfig) -> Result<PolicyModel> {
    cfg.validate()?;
    let plug = PlugInUtility::new(est, &data.graph, &data.x)?;
    let ops = data.graph.operators();
    let mut grid = cfg.gamma_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut closest = f64::INFINITY;
    for (k, &gamma) in grid.iter().enumerate() {
        let seed = cfg.seed.wrapping_mul(1000).wrapping_add(k as u64);
        let net = fit_one(&plug, data, cfg, gamma, seed)?;
        let probs = net.probabilities(&data.x, &ops)?;
        let rate = treated_rate(&probs, cfg.rate_draws, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
        let residual = (rate - cfg.p_t).abs();
        log::info!("policy γ = {gamma}: treated rate {rate:.4}, residual {residual:.4}");
        if residual <= cfg.tolerance {
            return Ok(PolicyModel { cfg: cfg.clone(), net, gamma, residual });
        }
        closest = closest.min(residual);
    }
    Err(Error::Infeasible { closest_residual: closest })
}

/// Estimated and (when ground truth exists) true utilities of a policy
/// and of randomized policies under the same capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityReport {
    pub s_hat: f64,
    pub s_true: Option<f64>,
    pub s_hat_random: f64,
    pub s_true_random: Option<f64>,
    pub delta_s_hat: f64,
    pub delta_s_true: Option<f64>,
    /// |treated rate − p_t|; for a trained policy, the value measured when
    /// its feasibility was checked.
    pub residual: f64,
    /// Treated fraction over the evaluated assignments.
    pub treated_rate: f64,
    pub gamma: f64,
}

/// Uniformly random assignment treating exactly round(p_t·n) nodes.
pub fn random_capacity_policy<R: Rng + ?Sized>(n: usize, p_t: f64, rng: &mut R) -> Vec<f64> {
    let k = ((p_t * n as f64).round() as usize).min(n);
    let mut pi = vec![0.0; n];
    for i in sample(rng, n, k) {
        pi[i] = 1.0;
    }
    pi
}

/// ΔŜ = Ŝ(π̂) − mean Ŝ(π_R) over `n_random` capacity-matched random
/// policies; ΔS likewise with true effects. Policy utilities average
/// `utility_draws` Bernoulli assignments drawn from π̂.
pub fn evaluate_improvement<R: Rng + ?Sized>(
    policy: &PolicyModel,
    est: &EstimatorModel,
    data: &Dataset,
    n_random: usize,
    rng: &mut R,
) -> Result<UtilityReport> {
    let probs = policy.probabilities(data)?;
    let mut rep = evaluate_probabilities(
        &probs,
        policy.cfg.p_t,
        policy.gamma,
        policy.cfg.utility_draws,
        est,
        data,
        n_random,
        rng,
    )?;
    // the few utility draws give a noisy rate; keep the feasibility residual
    rep.residual = policy.residual;
    Ok(rep)
}

/// [`evaluate_improvement`] for an explicit probability vector.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_probabilities<R: Rng + ?Sized>(
    probs: &[f64],
    p_t: f64,
    gamma: f64,
    utility_draws: usize,
    est: &EstimatorModel,
    data: &Dataset,
    n_random: usize,
    rng: &mut R,
) -> Result<UtilityReport> {
    if n_random == 0 || utility_draws == 0 {
        return Err(Error::invalid("need at least one random baseline and one utility draw"));
    }
    if probs.len() != data.n() {
        return Err(Error::shape(format!("{} probabilities for {} nodes", probs.len(), data.n())));
    }
    let plug = PlugInUtility::new(est, &data.graph, &data.x)?;
    let world = TrueWorld::from_dataset(data).ok();

    let eval = |pis: &[Vec<f64>]| -> Result<(f64, Option<f64>)> {
        let mut s_hat = 0.0;
        let mut s_true = 0.0;
        for pi in pis {
            s_hat += plug.utility(pi)?;
            if let Some(w) = &world {
                s_true += w.utility(pi)?;
            }
        }
        let m = pis.len() as f64;
        Ok((s_hat / m, world.as_ref().map(|_| s_true / m)))
    };

    let draws: Vec<Vec<f64>> = (0..utility_draws)
        .map(|_| probs.iter().map(|&p| f64::from(u8::from(rng.random_bool(p.clamp(0.0, 1.0))))).collect())
        .collect();
    let rate = draws.iter().flatten().sum::<f64>() / (utility_draws * probs.len()) as f64;
    let randoms: Vec<Vec<f64>> = (0..n_random).map(|_| random_capacity_policy(data.n(), p_t, rng)).collect();
    let (s_hat, s_true) = eval(&draws)?;
    let (s_hat_random, s_true_random) = eval(&randoms)?;
    Ok(UtilityReport {
        s_hat,
        s_true,
        s_hat_random,
        s_true_random,
        delta_s_hat: s_hat - s_hat_random,
        delta_s_true: s_true.zip(s_true_random).map(|(a, b)| a - b),
        residual: (rate - p_t).abs(),
        treated_rate: rate,
        gamma,
    })
}

/// Hard treatment vector of the top `round(p_t·n)` scores.
pub fn top_fraction(scores: &[f64], p_t: f64) -> Vec<f64> {
    let n = scores.len();
    let k = ((p_t * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut pi = vec![0.0; n];
    for &i in &order[..k] {
        pi[i] = 1.0;
    }
    pi
}
