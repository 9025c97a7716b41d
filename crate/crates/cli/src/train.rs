//! Estimator training and evaluation over (kind × repetition) runs.

use std::path::{Path, PathBuf};

use netcausal::baselines::{fit_meta, fit_propensity, MetaLearner, Propensity};
use netcausal::estimators::{
    evaluate_split, metrics, outcome_scale, train_estimator, EstimatorModel, ModelFile, Predictions,
};
use netcausal::synthgen::{AssignMode, Dataset, Split};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{mean_std, read_json, to_json, write_json, write_text, Manifest};
use crate::config::{run_seed, EstimatorKind, ExperimentConfig, PropensityMode};
use crate::error::{CliError, Result};

pub const METRICS_FILE: &str = "metrics.json";
pub const MODELS_DIR: &str = "models";

/// A saved estimator of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub estimator: String,
    pub seed: u64,
    pub config_hash: String,
    pub model: StoredModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum StoredModel {
    Gnn { file: ModelFile },
    Meta { learner: MetaLearner, propensity: Propensity, y_std: f64 },
}

pub enum Fitted {
    Gnn(EstimatorModel),
    Meta { learner: MetaLearner, y_std: f64 },
}

impl Fitted {
    pub fn predictions(&self, data: &Dataset) -> Result<Predictions> {
        Ok(match self {
            Fitted::Gnn(m) => m.predictions(data)?,
            Fitted::Meta { learner, .. } => learner.predictions(data)?,
        })
    }

    /// Training outcome sd used to standardize reported errors.
    pub fn scale(&self) -> f64 {
        match self {
            Fitted::Gnn(m) => m.y_std,
            Fitted::Meta { y_std, .. } => *y_std,
        }
    }

    pub fn gnn(self) -> Result<EstimatorModel> {
        match self {
            Fitted::Gnn(m) => Ok(m),
            Fitted::Meta { .. } => Err(CliError::config("policy learning needs a GNN estimator, not a DA/DR baseline")),
        }
    }
}

impl ModelArtifact {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn fitted(&self) -> Result<Fitted> {
        Ok(match &self.model {
            StoredModel::Gnn { file } => Fitted::Gnn(EstimatorModel::from_file(file.clone())?),
            StoredModel::Meta { learner, y_std, .. } => Fitted::Meta { learner: learner.clone(), y_std: *y_std },
        })
    }
}

/// One metrics record: test errors in training-sd units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub estimator: String,
    pub rep: usize,
    pub seed: u64,
    /// Absent when the dataset carries no test outcomes.
    pub rmse: Option<f64>,
    /// Mean squared ITE error; absent without ground truth.
    pub pehe: Option<f64>,
    pub config_hash: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub runs: usize,
    pub rmse_mean: Option<f64>,
    pub rmse_std: Option<f64>,
    pub pehe_mean: Option<f64>,
    pub pehe_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub config_hash: String,
    pub seed: u64,
    pub split: String,
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SummaryRow>,
}

fn propensity_for(cfg: &ExperimentConfig, data: &Dataset) -> Result<Propensity> {
    let train = data.indices(Split::Train);
    let t: Vec<f64> = train.iter().map(|&i| data.t[i]).collect();
    let known = match data.config.as_ref().map(|c| c.assignment) {
        Some(AssignMode::Randomized { p }) => Some(p),
        _ => None,
    };
    Ok(match (cfg.baselines.propensity, known) {
        (PropensityMode::Auto, Some(p)) => Propensity::Constant { p },
        (PropensityMode::Constant, _) => Propensity::Constant { p: t.iter().sum::<f64>() / t.len().max(1) as f64 },
        _ => fit_propensity(&data.x.select_rows(&train), &t)?,
    })
}

/// Fits one estimator on `visible` (test outcomes withheld).
pub fn fit_one(cfg: &ExperimentConfig, name: &str, seed: u64, visible: &Dataset) -> Result<ModelArtifact> {
    let model = match EstimatorKind::parse(name)? {
        EstimatorKind::Gnn(kind) => {
            let mut mcfg = cfg.estimator.model.clone();
            mcfg.gnn = kind;
            if cfg.estimator.width_divisor > 1 {
                mcfg = mcfg.scaled(cfg.estimator.width_divisor);
            }
            let tcfg = netcausal::estimators::TrainConfig { seed, ..cfg.estimator.train.clone() };
            let (model, report) = train_estimator(mcfg, visible, &tcfg)?;
            log::info!("{name} seed {seed}: best epoch {} val mse {:.5}", report.best_epoch, report.best_val_mse);
            StoredModel::Gnn { file: model.to_file() }
        }
        EstimatorKind::Meta(kind, backend) => {
            let propensity = propensity_for(cfg, visible)?;
            let learner = fit_meta(kind, visible, &propensity, &cfg.baselines.regressor(backend, seed))?;
            StoredModel::Meta { learner, propensity, y_std: outcome_scale(visible)?.1 }
        }
    };
    Ok(ModelArtifact { estimator: name.into(), seed, config_hash: cfg.hash(), model })
}

/// Test-split errors. √MSE needs every test outcome; PEHE needs truth.
pub fn test_metrics(fitted: &Fitted, data: &Dataset) -> Result<(Option<f64>, Option<f64>)> {
    let pred = fitted.predictions(data)?;
    let rows = data.indices(Split::Test);
    if rows.iter().all(|&i| data.y[i].is_finite()) {
        let m = evaluate_split(&pred, data, Split::Test, fitted.scale())?;
        return Ok((Some(m.rmse), m.pehe));
    }
    log::warn!("test outcomes missing; reporting PEHE only");
    let s = fitted.scale();
    let Some(truth) = &data.truth else { return Ok((None, None)) };
    let scaled = |v: &[f64]| v.iter().map(|x| x / s).collect::<Vec<_>>();
    let tau_hat = scaled(&pred.tau_hat);
    let m = metrics(&tau_hat, &tau_hat, &tau_hat, Some(&scaled(&truth.tau)), &rows)?;
    Ok((None, m.pehe))
}

fn model_name(kind: &str, rep: usize) -> String {
    format!("{MODELS_DIR}/{kind}-{rep}.json")
}

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut names: Vec<&str> = Vec::new();
    for r in records {
        if !names.contains(&r.estimator.as_str()) {
            names.push(&r.estimator);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let rows: Vec<&MetricsRecord> = records.iter().filter(|r| r.estimator == name).collect();
            let stat = |f: &dyn Fn(&MetricsRecord) -> Option<f64>| {
                let v: Option<Vec<f64>> = rows.iter().map(|r| f(r)).collect();
                v.map(|v| mean_std(&v))
            };
            let rmse = stat(&|r| r.rmse);
            let pehe = stat(&|r| r.pehe);
            SummaryRow {
                estimator: name.into(),
                runs: rows.len(),
                rmse_mean: rmse.map(|s| s.0),
                rmse_std: rmse.map(|s| s.1),
                pehe_mean: pehe.map(|s| s.0),
                pehe_std: pehe.map(|s| s.1),
            }
        })
        .collect()
}

/// Trains every configured kind `estimator.seeds` times, writes each model
/// under `models/` and the test metrics to `metrics.json`.
pub fn cmd_train(cfg: &ExperimentConfig, data_dir: &Path, out: &Path) -> Result<MetricsFile> {
    let data = Dataset::load_dir(data_dir)?;
    let visible = data.without_test_outcomes();
    let hash = cfg.hash();
    let jobs: Vec<(String, usize)> =
        cfg.estimator.kinds.iter().flat_map(|k| (0..cfg.estimator.seeds).map(move |rep| (k.clone(), rep))).collect();
    let runs: Vec<(MetricsRecord, String)> = jobs
        .par_iter()
        .map(|(kind, rep)| {
            let seed = run_seed(cfg.seed, *rep);
            let art = fit_one(cfg, kind, seed, &visible)?;
            let (rmse, pehe) = test_metrics(&art.fitted()?, &data)?;
            let rec = MetricsRecord {
                estimator: kind.clone(),
                rep: *rep,
                seed,
                rmse,
                pehe,
                config_hash: hash.clone(),
                model: model_name(kind, *rep),
            };
            Ok((rec, to_json(&art)?))
        })
        .collect::<Result<_>>()?;

    let mut manifest = Manifest::new("train", cfg);
    for (rec, text) in &runs {
        write_text(&out.join(&rec.model), text)?;
        manifest.files.push(rec.model.clone());
    }
    let records: Vec<MetricsRecord> = runs.into_iter().map(|r| r.0).collect();
    let file =
        MetricsFile { config_hash: hash, seed: cfg.seed, split: "test".into(), summary: summarize(&records), records };
    write_json(&out.join(METRICS_FILE), &file)?;
    manifest.files.push(METRICS_FILE.into());
    manifest.write(out)?;
    Ok(file)
}

/// Test metrics of a saved model on a dataset directory.
pub fn cmd_eval(cfg: &ExperimentConfig, data_dir: &Path, model: &Path) -> Result<MetricsRecord> {
    let data = Dataset::load_dir(data_dir)?;
    let art = ModelArtifact::load(model)?;
    let (rmse, pehe) = test_metrics(&art.fitted()?, &data)?;
    Ok(MetricsRecord {
        estimator: art.estimator,
        rep: 0,
        seed: art.seed,
        rmse,
        pehe,
        config_hash: cfg.hash(),
        model: PathBuf::from(model).display().to_string(),
    })
}
