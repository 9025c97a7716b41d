//! Experiment configuration: one TOML document, every field defaulted.

use std::path::{Path, PathBuf};

use netcausal::baselines::{MetaKind, RegressorKind};
use netcausal::estimators::{EstimatorConfig, TrainConfig};
use netcausal::graph::Metric;
use netcausal::numkit::GnnKind;
use netcausal::policy::PolicyConfig;
use netcausal::regretlab::{BoundInputs, Covering, XiFamily};
use netcausal::synthgen::{AssignMode, GenConfig, GraphSource, ResponseModel, Schema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed; every run seed is derived from it.
    pub seed: u64,
    pub graph: GraphSource,
    pub generate: GenerateSection,
    pub estimator: EstimatorSection,
    pub baselines: BaselinesSection,
    pub policy: PolicySection,
    pub regret: RegretSection,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            graph: GraphSource::Knn { k: 10, metric: Metric::Cosine },
            generate: GenerateSection::default(),
            estimator: EstimatorSection::default(),
            baselines: BaselinesSection::default(),
            policy: PolicySection::default(),
            regret: RegretSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    pub schema: Schema,
    pub n: usize,
    pub assignment: AssignMode,
    pub alpha: f64,
    pub response: ResponseModel,
    pub kappa_nl: f64,
    pub noise_sd: f64,
    pub spillover_order: Option<usize>,
}

impl Default for GenerateSection {
    fn default() -> Self {
        let w = GenConfig::wave1(1000, 0);
        Self {
            schema: w.schema,
            n: w.n,
            assignment: w.assignment,
            alpha: w.alpha,
            response: w.response,
            kappa_nl: w.kappa_nl,
            noise_sd: w.noise_sd,
            spillover_order: w.spillover_order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorSection {
    /// Any of [`ESTIMATOR_KINDS`].
    pub kinds: Vec<String>,
    /// Repetitions per kind.
    pub seeds: usize,
    /// Divides every layer width (desk runs use 2).
    pub width_divisor: usize,
    /// The `gnn` field is overridden by each kind.
    pub model: EstimatorConfig,
    /// The `seed` field is overridden per repetition.
    pub train: TrainConfig,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            kinds: vec!["sage".into()],
            seeds: 3,
            width_divisor: 1,
            model: EstimatorConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

pub const ESTIMATOR_KINDS: [&str; 7] = ["gcn", "sage", "onegnn", "da-ridge", "dr-ridge", "da-mlp", "dr-mlp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Ridge,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Gnn(GnnKind),
    Meta(MetaKind, Backend),
}

impl EstimatorKind {
    pub fn parse(name: &str) -> Result<Self> {
        let kind = match name {
            "gcn" => EstimatorKind::Gnn(GnnKind::Gcn),
            "sage" => EstimatorKind::Gnn(GnnKind::Sage),
            "onegnn" => EstimatorKind::Gnn(GnnKind::OneGnn),
            "da-ridge" => EstimatorKind::Meta(MetaKind::Da, Backend::Ridge),
            "dr-ridge" => EstimatorKind::Meta(MetaKind::Dr, Backend::Ridge),
            "da-mlp" => EstimatorKind::Meta(MetaKind::Da, Backend::Mlp),
            "dr-mlp" => EstimatorKind::Meta(MetaKind::Dr, Backend::Mlp),
            _ => {
                return Err(CliError::UnknownEstimator { name: name.into(), valid: ESTIMATOR_KINDS.join(", ") });
            }
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityMode {
    /// Known p for randomized designs, logistic otherwise.
    #[default]
    Auto,
    /// Treated fraction of the training rows.
    Constant,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselinesSection {
    pub propensity: PropensityMode,
    pub ridge_lambda: f64,
    pub mlp_hidden: Vec<usize>,
    pub mlp_epochs: usize,
    pub mlp_lr: f64,
    pub mlp_weight_decay: f64,
}

impl Default for BaselinesSection {
    fn default() -> Self {
        let RegressorKind::Mlp { hidden, epochs, lr, weight_decay, .. } = RegressorKind::mlp(0) else { unreachable!() };
        Self {
            propensity: PropensityMode::Auto,
            ridge_lambda: 1.0,
            mlp_hidden: hidden,
            mlp_epochs: epochs,
            mlp_lr: lr,
            mlp_weight_decay: weight_decay,
        }
    }
}

impl BaselinesSection {
    pub fn regressor(&self, backend: Backend, seed: u64) -> RegressorKind {
        match backend {
            Backend::Ridge => RegressorKind::ridge(self.ridge_lambda),
            Backend::Mlp => RegressorKind::Mlp {
                hidden: self.mlp_hidden.clone(),
                epochs: self.mlp_epochs,
                lr: self.mlp_lr,
                weight_decay: self.mlp_weight_decay,
                seed,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicySection {
    pub seeds: usize,
    /// Random capacity-matched policies behind each ΔŜ / ΔS.
    pub n_random: usize,
    /// The `seed` field is overridden per repetition.
    pub train: PolicyConfig,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self { seeds: 5, n_random: 100, train: PolicyConfig::default() }
    }
}

/// Graph family swept by the bound checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Family {
    Edgeless,
    Path,
    Ring,
    Star,
    Regular { d: usize },
    Random { p: f64 },
}

impl Family {
    pub fn label(&self) -> String {
        match self {
            Family::Edgeless => "edgeless".into(),
            Family::Path => "path".into(),
            Family::Ring => "ring".into(),
            Family::Star => "star".into(),
            Family::Regular { d } => format!("regular-{d}"),
            Family::Random { p } => format!("random-{p}"),
        }
    }
}

/// Bound constants; n and d_max come from each graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundSection {
    pub m1: f64,
    pub m2: f64,
    pub l: f64,
    pub pi_class_size: f64,
    pub delta_conf: f64,
    pub alpha_tau: f64,
    pub alpha_delta: f64,
    pub zeta_tau: f64,
    pub zeta_delta: f64,
    pub p_t: Option<f64>,
    pub covering: Covering,
}

impl Default for BoundSection {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 0.5,
            l: 0.5,
            pi_class_size: 1000.0,
            delta_conf: 0.05,
            alpha_tau: 1.0,
            alpha_delta: 1.0,
            zeta_tau: 0.5,
            zeta_delta: 0.5,
            p_t: Some(0.3),
            covering: Covering::Finite,
        }
    }
}

impl BoundSection {
    pub fn inputs(&self, n: usize, d_max: usize) -> BoundInputs {
        BoundInputs {
            n,
            d_max,
            m1: self.m1,
            m2: self.m2,
            l: self.l,
            pi_class_size: self.pi_class_size,
            delta_conf: self.delta_conf,
            alpha_tau: self.alpha_tau,
            alpha_delta: self.alpha_delta,
            zeta_tau: self.zeta_tau,
            zeta_delta: self.zeta_delta,
            p_t: self.p_t,
            covering: self.covering,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegretSection {
    pub families: Vec<Family>,
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub eps_points: usize,
    pub xi: XiFamily,
    pub bound: BoundSection,
    pub claim1_d: Vec<usize>,
    pub claim1_n: Vec<usize>,
    pub lipschitz_pairs: usize,
    pub lipschitz_alpha: f64,
}

impl Default for RegretSection {
    fn default() -> Self {
        Self {
            families: vec![Family::Edgeless, Family::Path, Family::Ring, Family::Star, Family::Regular { d: 4 }],
            sizes: vec![100, 400],
            trials: 10_000,
            eps_lo: 0.01,
            eps_hi: 0.2,
            eps_points: 10,
            xi: XiFamily::default(),
            bound: BoundSection::default(),
            claim1_d: vec![1, 2, 4, 8],
            claim1_n: vec![100, 1000, 10_000],
            lipschitz_pairs: 500,
            lipschitz_alpha: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Used when no --out is given.
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| CliError::File { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    /// Defaults when no file is given, then the seed override.
    pub fn resolve(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for k in &self.estimator.kinds {
            EstimatorKind::parse(k)?;
        }
        if self.estimator.kinds.is_empty() {
            return Err(CliError::config("estimator.kinds is empty"));
        }
        if self.estimator.seeds == 0 || self.policy.seeds == 0 {
            return Err(CliError::config("seed counts must be positive"));
        }
        if self.estimator.width_divisor == 0 {
            return Err(CliError::config("estimator.width_divisor must be positive"));
        }
        self.estimator.model.validate()?;
        self.estimator.train.validate()?;
        self.policy.train.validate()?;
        if self.policy.n_random == 0 {
            return Err(CliError::config("policy.n_random must be positive"));
        }
        let r = &self.regret;
        if r.families.is_empty() {
            return Err(CliError::config("regret.families is empty"));
        }
        if r.sizes.is_empty() || r.sizes.iter().any(|&n| n < 2) {
            return Err(CliError::config("regret.sizes must be nonempty with every n >= 2"));
        }
        if r.trials == 0 || r.eps_points == 0 || !(r.eps_lo > 0.0 && r.eps_hi >= r.eps_lo) {
            return Err(CliError::config("regret needs trials, eps_points and 0 < eps_lo <= eps_hi"));
        }
        for f in &r.families {
            match *f {
                Family::Regular { d: 0 } => return Err(CliError::config("regular family needs d >= 1")),
                Family::Random { p } if !(0.0..=1.0).contains(&p) => {
                    return Err(CliError::config(format!("random family needs p in [0, 1], got {p}")));
                }
                _ => {}
            }
        }
        r.xi.bounds()?;
        r.bound.inputs(r.sizes[0], 1).validate()?;
        self.gen_config().validate()?;
        Ok(())
    }

    /// Generator settings with the [graph] section and the root seed.
    pub fn gen_config(&self) -> GenConfig {
        let g = &self.generate;
        GenConfig {
            schema: g.schema,
            n: g.n,
            graph: self.graph.clone(),
            assignment: g.assignment,
            alpha: g.alpha,
            response: g.response,
            kappa_nl: g.kappa_nl,
            noise_sd: g.noise_sd,
            spillover_order: g.spillover_order,
            seed: self.seed,
        }
    }

    /// sha256 over the canonical JSON form of the effective config, so
    /// formatting, comments and spelled-out defaults do not change it.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

/// Seed of repetition `rep` under root seed `root`.
pub fn run_seed(root: u64, rep: usize) -> u64 {
    root.wrapping_mul(1_000_003).wrapping_add(rep as u64)
}
