use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{EstimatorConfig, EstimatorModel, LossInputs};
use crate::error::{Error, Result};
use crate::numkit::{Adam, AdamConfig, Tape};
use crate::synthgen::{Dataset, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Validation checkpoint interval.
    pub eval_every: usize,
    pub dropout: f64,
    /// Upper bound on the HSIC mini-batch.
    pub hsic_batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, weight_decay: 1e-4, epochs: 20_000, eval_every: 2_000, dropout: 0.5, hsic_batch: 256, seed: 0 }
    }
}

impl TrainConfig {
    /// Short schedule for single-core runs: no dropout, stronger decay,
    /// validation every 100 epochs.
    pub fn desk(seed: u64) -> Self {
        Self { lr: 3e-3, weight_decay: 1.0, epochs: 3_000, eval_every: 100, dropout: 0.0, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::invalid("lr, epochs and eval_every must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub hsic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    /// True when one arm was missing from the training rows and the
    /// balancing term was dropped.
    pub kappa_dropped: bool,
}

/// Mean and population sd of the training outcomes (sd floored to 1 for
/// constant outcomes).
pub fn outcome_scale(data: &Dataset) -> Result<(f64, f64)> {
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let ys: Vec<f64> = train.iter().map(|&i| data.y[i]).collect();
    if ys.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("training outcomes must be present"));
    }
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / ys.len() as f64;
    let sd = var.sqrt();
    Ok((mean, if sd > 1e-12 { sd } else { 1.0 }))
}

/// Fits a fresh model on the training split and returns the parameters of
/// the best validation checkpoint. Only train outcomes are read for
/// fitting and only validation outcomes for checkpoint selection.
pub fn train_estimator(
    cfg: EstimatorConfig,
    data: &Dataset,
    tcfg: &TrainConfig,
) -> Result<(EstimatorModel, TrainReport)> {
    tcfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut model = EstimatorModel::new(cfg, data.x.cols(), &mut rng)?;
    let (mean, sd) = outcome_scale(data)?;
    model.y_mean = mean;
    model.y_std = sd;

    let train = data.indices(Split::Train);
    let mut val = data.indices(Split::Val);
    if val.is_empty() {
        log::warn!("validation split is empty; checkpoints are selected on training loss");
        val = train.clone();
    }
    let visible: Vec<usize> = train.iter().chain(&val).copied().collect();
    let mut y_std = vec![f64::NAN; data.n()];
    for &i in &visible {
        y_std[i] = (data.y[i] - mean) / sd;
    }

    let treated = data.treated_fraction(&train);
    let kappa_dropped = model.cfg.kappa > 0.0 && (treated == 0.0 || treated == 1.0);
    if kappa_dropped {
        log::warn!("training split has a single treatment arm; HSIC term disabled");
    }
    let kappa = if kappa_dropped { Some(0.0) } else { None };

    let ops = data.graph.operators::<f64>();
    let inputs =
        LossInputs { x: &data.x, t: &data.t, g: &data.exposure, ops: &ops, y_std: &y_std, rows: &train, kappa };
    let val_inputs = LossInputs { rows: &val, kappa: Some(0.0), ..inputs };

    let mut adam =
        Adam::new(AdamConfig { lr: tcfg.lr, weight_decay: tcfg.weight_decay, ..AdamConfig::default() }, &model.params)?;
    let batch_size = tcfg.hsic_batch.min(train.len());
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut history = Vec::new();
    let mut last_finite = None;
    let mut tape = Tape::new();

    for epoch in 1..=tcfg.epochs {
        tape.reset();
        let batch: Vec<usize> = sample(&mut rng, train.len(), batch_size).into_iter().map(|k| train[k]).collect();
        let vars = model.params.attach(&mut tape, true);
        let step =
            model.loss_on_tape(&mut tape, &vars, &inputs, &batch, Some((tcfg.dropout, &mut rng))).and_then(|l| {
                tape.backward(l.total)?;
                Ok(l)
            });
        let lv = match step {
            Ok(l) if tape.scalar(l.total).is_finite() => l,
            Ok(_) | Err(Error::Numeric(_)) => return Err(Error::Diverged { epoch, last_finite }),
            Err(e) => return Err(e),
        };
        let grads = model.params.collect_grads(&tape, &vars);
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { epoch, last_finite });
        }
        adam.step(&mut model.params, &grads)?;
        last_finite = Some(epoch);

        if epoch % tcfg.eval_every == 0 || epoch == tcfg.epochs {
            let train_mse = tape.scalar(lv.mse);
            let hsic = lv.hsic.map(|h| tape.scalar(h));
            let val_mse = eval_loss(&model, &val_inputs)?;
            log::debug!("epoch {epoch}: train mse {train_mse:.5}, val mse {val_mse:.5}");
            history.push(EpochRecord { epoch, train_mse, val_mse, hsic });
            if val_mse < best.0 {
                best = (val_mse, epoch, model.params.clone());
            }
        }
    }
    model.params = best.2;
    Ok((model, TrainReport { history, best_epoch: best.1, best_val_mse: best.0, kappa_dropped }))
}

/// Dropout-free MSE (standardized units) on `inputs.rows`.
pub fn eval_loss(model: &EstimatorModel, inputs: &LossInputs<'_>) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = model.params.attach(&mut tape, false);
    let l = model.loss_on_tape::<ChaCha8Rng>(&mut tape, &vars, inputs, &[], None)?;
    let v = tape.scalar(l.mse);
    if !v.is_finite() {
        return Err(Error::Numeric("validation loss".into()));
    }
    Ok(v)
}

/// HSIC of the balanced representation over the training rows (at most
/// `cap` of them, taken in index order), for monitoring.
pub fn representation_hsic(model: &EstimatorModel, data: &Dataset, cap: usize) -> Result<f64> {
    use super::model::BalanceTarget;
    let train: Vec<usize> = data.indices(Split::Train).into_iter().take(cap).collect();
    let ops = data.graph.operators::<f64>();
    let mut tape = Tape::new();
    let vars = model.params.attach(&mut tape, false);
    let x = tape.constant(data.x.clone());
    let t = tape.constant(crate::numkit::Matrix::column(&data.t));
    let g = tape.constant(crate::numkit::Matrix::column(&data.exposure));
    let rep = model.represent::<ChaCha8Rng>(&mut tape, &vars, x, t, g, &ops, None)?;
    let r = if model.cfg.balance == BalanceTarget::Gnn { rep.z } else { rep.phi };
    let rows = tape.value(r).select_rows(&train);
    let tb: Vec<f64> = train.iter().map(|&i| data.t[i]).collect();
    crate::numkit::hsic_value(&rows, &tb, model.cfg.bandwidth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, GenConfig};

    fn tiny(seed: u64) -> Dataset {
        let cfg = GenConfig { noise_sd: 0.0, ..GenConfig::wave1(60, seed) };
        generate(&cfg).unwrap()
    }

    fn small_cfg() -> EstimatorConfig {
        EstimatorConfig::default().scaled(4)
    }

    fn train_rmse(model: &EstimatorModel, data: &Dataset) -> f64 {
        let ops = data.graph.operators::<f64>();
        let y = model.predict(&data.x, &data.t, &data.exposure, &ops).unwrap();
        let rows = data.indices(Split::Train);
        let mse = rows.iter().map(|&i| ((y[i] - data.y[i]) / model.y_std).powi(2)).sum::<f64>() / rows.len() as f64;
        mse.sqrt()
    }

    #[test]
    fn tiny_linear_world_is_fit() {
        let data = tiny(1);
        let (model, rep) = train_estimator(small_cfg(), &data, &TrainConfig::desk(2)).unwrap();
        assert!(!rep.kappa_dropped);
        assert_eq!(rep.history.len(), 30);
        assert!(train_rmse(&model, &data) < 0.05);
    }

    #[test]
    fn constant_outcome_gives_constant_predictor() {
        let mut data = tiny(3);
        data.y.iter_mut().for_each(|y| *y = 2.5);
        let tcfg = TrainConfig { epochs: 1000, ..TrainConfig::desk(4) };
        let (model, _) = train_estimator(small_cfg(), &data, &tcfg).unwrap();
        assert_eq!(model.y_std, 1.0);
        assert!(train_rmse(&model, &data) < 1e-3);
    }

    #[test]
    fn balancing_does_not_raise_hsic() {
        let data = generate(&GenConfig::wave1(200, 5)).unwrap();
        let tcfg = TrainConfig { epochs: 600, ..TrainConfig::desk(6) };
        let run = |kappa: f64| {
            let cfg = EstimatorConfig { kappa, ..small_cfg() };
            let (model, rep) = train_estimator(cfg, &data, &tcfg).unwrap();
            assert_eq!(rep.history.last().unwrap().hsic.is_some(), kappa > 0.0);
            representation_hsic(&model, &data, 256).unwrap()
        };
        let (plain, balanced) = (run(0.0), run(0.2));
        assert!(balanced <= plain, "{balanced} > {plain}");
    }

    #[test]
    fn single_arm_drops_balancing() {
        let mut data = tiny(7);
        data.t.iter_mut().for_each(|t| *t = 0.0);
        data.exposure.iter_mut().for_each(|g| *g = 0.0);
        let cfg = EstimatorConfig { kappa: 0.2, ..small_cfg() };
        let tcfg = TrainConfig { epochs: 50, eval_every: 25, ..TrainConfig::desk(8) };
        let (_, rep) = train_estimator(cfg, &data, &tcfg).unwrap();
        assert!(rep.kappa_dropped);
        assert!(rep.history.iter().all(|r| r.hsic.is_none()));
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let data = tiny(9);
        let tcfg = TrainConfig { lr: 1e200, epochs: 200, ..TrainConfig::desk(10) };
        match train_estimator(small_cfg(), &data, &tcfg) {
            Err(Error::Diverged { epoch, last_finite }) => assert_eq!(last_finite, Some(epoch - 1)),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn bad_schedule_rejected() {
        let data = tiny(11);
        for tcfg in [
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { dropout: 1.0, ..TrainConfig::default() },
        ] {
            assert!(train_estimator(small_cfg(), &data, &tcfg).is_err());
        }
    }

    #[test]
    fn ite_beats_constant_effect() {
        let data = generate(&GenConfig::wave1(400, 12)).unwrap();
        let (model, _) = train_estimator(EstimatorConfig::default().scaled(2), &data, &TrainConfig::desk(13)).unwrap();
        let train = data.indices(Split::Train);
        let arm_mean = |flag: f64| {
            let ys: Vec<f64> = train.iter().filter(|&&i| data.t[i] == flag).map(|&i| data.y[i]).collect();
            ys.iter().sum::<f64>() / ys.len() as f64
        };
        let naive = arm_mean(1.0) - arm_mean(0.0);
        let tau = &data.truth().unwrap().tau;
        let tau_hat = model.extract_ite(&data.x).unwrap();
        let test = data.indices(Split::Test);
        let pehe =
            |f: &dyn Fn(usize) -> f64| test.iter().map(|&i| (tau[i] - f(i)).powi(2)).sum::<f64>() / test.len() as f64;
        let (gnn, constant) = (pehe(&|i| tau_hat[i]), pehe(&|_| naive));
        assert!(gnn < constant, "{gnn} vs {constant}");
    }
}
