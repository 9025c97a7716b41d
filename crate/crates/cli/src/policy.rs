//! Capacity-constrained policy learning through a saved estimator,
//! repeated over seeds.

use std::path::Path;

use netcausal::policy::{evaluate_improvement, train_policy, PolicyConfig, UtilityReport};
use netcausal::synthgen::Dataset;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{mean_std, write_json, Manifest};
use crate::config::{run_seed, ExperimentConfig};
use crate::error::Result;
use crate::train::ModelArtifact;

pub const POLICY_FILE: &str = "policy.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub rep: usize,
    pub seed: u64,
    pub report: UtilityReport,
}

/// Mean ± sample std over repetitions; `se` is std/√runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        let (mean, std) = mean_std(v);
        Self { mean, std, se: std / (v.len() as f64).sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub p_t: f64,
    pub delta_s_hat: Stat,
    /// Absent without ground truth.
    pub delta_s_true: Option<Stat>,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub config_hash: String,
    pub seed: u64,
    pub estimator: String,
    pub runs: Vec<PolicyRun>,
    pub summary: PolicySummary,
}

pub fn summarize(p_t: f64, runs: &[PolicyRun]) -> PolicySummary {
    let hat: Vec<f64> = runs.iter().map(|r| r.report.delta_s_hat).collect();
    let truth: Option<Vec<f64>> = runs.iter().map(|r| r.report.delta_s_true).collect();
    PolicySummary {
        p_t,
        delta_s_hat: Stat::of(&hat),
        delta_s_true: truth.map(|v| Stat::of(&v)),
        max_residual: runs.iter().map(|r| r.report.residual).fold(0.0, f64::max),
    }
}

/// Trains `policy.seeds` policies through the estimator in `model` and
/// reports ΔŜ and ΔS against capacity-matched random policies.
pub fn cmd_policy(cfg: &ExperimentConfig, data_dir: &Path, model: &Path, out: &Path) -> Result<PolicyFile> {
    let art = ModelArtifact::load(model)?;
    let est = art.fitted()?.gnn()?;
    let data = Dataset::load_dir(data_dir)?;
    let runs: Vec<PolicyRun> = (0..cfg.policy.seeds)
        .into_par_iter()
        .map(|rep| {
            let seed = run_seed(cfg.seed, rep);
            let pcfg = PolicyConfig { seed, ..cfg.policy.train.clone() };
            let policy = train_policy(&est, &data, &pcfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1);
            let report = evaluate_improvement(&policy, &est, &data, cfg.policy.n_random, &mut rng)?;
            Ok(PolicyRun { rep, seed, report })
        })
        .collect::<Result<_>>()?;
    let file = PolicyFile {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        estimator: art.estimator,
        summary: summarize(cfg.policy.train.p_t, &runs),
        runs,
    };
    write_json(&out.join(POLICY_FILE), &file)?;
    let mut manifest = Manifest::new("policy", cfg);
    manifest.files.push(POLICY_FILE.into());
    manifest.write(out)?;
    Ok(file)
}
