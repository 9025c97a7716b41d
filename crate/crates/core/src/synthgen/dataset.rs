use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::assign::{assign_treatment, AssignMode};
use super::covariates::{gen_covariates, parse_numeric_csv, standardize_columns, Schema};
use super::response::{gen_response, ResponseModel};
use super::spillover::gen_spillover;
use super::truth::gen_truth;
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, load_edge_list, random_regular_graph, write_edge_list, Graph, Metric};
use crate::numkit::Matrix;

pub const SPLIT_FRACTIONS: (f64, f64, f64) = (0.80, 0.05, 0.15);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Random 80/5/15 partition. Train always receives at least one node.
pub fn make_splits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Split> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let n_train = ((n as f64 * SPLIT_FRACTIONS.0).round() as usize).clamp(1.min(n), n);
    let n_val = ((n as f64 * SPLIT_FRACTIONS.1).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in perm.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GraphSource {
    /// Symmetrized kNN graph over the standardized covariates.
    Knn {
        k: usize,
        #[serde(default)]
        metric: Metric,
    },
    /// Random d-regular graph, independent of covariates.
    Regular { d: usize },
    /// Edge-list file.
    Edges { path: PathBuf },
}

fn default_noise_sd() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub schema: Schema,
    pub n: usize,
    pub graph: GraphSource,
    pub assignment: AssignMode,
    pub alpha: f64,
    pub response: ResponseModel,
    #[serde(default)]
    pub kappa_nl: f64,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    /// Overrides the schema's spillover reach.
    #[serde(default)]
    pub spillover_order: Option<usize>,
    pub seed: u64,
}

impl GenConfig {
    /// Wave1-like headline setting: kNN k = 10, p = 0.1, α = 0.5, G0.
    pub fn wave1(n: usize, seed: u64) -> Self {
        Self {
            schema: Schema::Wave1Like,
            n,
            graph: GraphSource::Knn { k: 10, metric: Metric::Cosine },
            assignment: AssignMode::Randomized { p: 0.1 },
            alpha: 0.5,
            response: ResponseModel::G0,
            kappa_nl: 0.0,
            noise_sd: default_noise_sd(),
            spillover_order: None,
            seed,
        }
    }

    pub fn order(&self) -> usize {
        self.spillover_order.unwrap_or_else(|| self.schema.spillover_order())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::invalid(format!("need at least 2 nodes, got n = {}", self.n)));
        }
        if let AssignMode::Randomized { p } = self.assignment {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::invalid(format!("treatment probability must lie in (0, 1), got {p}")));
            }
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.kappa_nl >= 0.0) {
            return Err(Error::invalid(format!("kappa_nl must be >= 0, got {}", self.kappa_nl)));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !matches!(self.order(), 1 | 2) {
            return Err(Error::invalid("spillover_order must be 1 or 2"));
        }
        Ok(())
    }
}

/// Simulator ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub y0: Vec<f64>,
    pub tau: Vec<f64>,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Covariates as supplied (written back to disk).
    pub raw: Matrix<f64>,
    /// Standardized covariates fed to every model.
    pub x: Matrix<f64>,
    pub names: Vec<String>,
    pub graph: Graph,
    pub t: Vec<f64>,
    /// Fraction of treated neighbors.
    pub exposure: Vec<f64>,
    /// Observed outcomes; NaN where withheld.
    pub y: Vec<f64>,
    pub split: Vec<Split>,
    pub truth: Option<Truth>,
    pub config: Option<GenConfig>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn indices(&self, s: Split) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.split[i] == s).collect()
    }

    pub fn truth(&self) -> Result<&Truth> {
        self.truth.as_ref().ok_or(Error::MissingTruth)
    }

    /// Treated fraction within `idx`.
    pub fn treated_fraction(&self, idx: &[usize]) -> f64 {
        if idx.is_empty() {
            return 0.0;
        }
        idx.iter().map(|&i| self.t[i]).sum::<f64>() / idx.len() as f64
    }

    /// Copy with test outcomes replaced by NaN.
    pub fn without_test_outcomes(&self) -> Self {
        let mut d = self.clone();
        for i in 0..d.n() {
            if d.split[i] == Split::Test {
                d.y[i] = f64::NAN;
            }
        }
        d
    }

    /// Checks the structural invariants shared by generated and loaded data.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.x.rows() != n
            || self.graph.n() != n
            || self.y.len() != n
            || self.exposure.len() != n
            || self.split.len() != n
        {
            return Err(Error::shape("dataset components disagree on the node count"));
        }
        if self.t.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("treatments must be 0 or 1"));
        }
        if self.exposure.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
            return Err(Error::invalid("exposure outside [0, 1]"));
        }
        if let Some(tr) = &self.truth {
            if tr.y0.len() != n || tr.tau.len() != n || tr.delta.len() != n {
                return Err(Error::shape("truth columns disagree on the node count"));
            }
        }
        Ok(())
    }
}

fn build_graph<R: Rng + ?Sized>(src: &GraphSource, x: &Matrix<f64>, n: usize, rng: &mut R) -> Result<Graph> {
    match src {
        GraphSource::Knn { k, metric } => build_knn_graph(x, *k, *metric),
        GraphSource::Regular { d } => random_regular_graph(n, *d, rng),
        GraphSource::Edges { path } => load_edge_list(path, n),
    }
}

/// Full semi-synthetic pipeline from one seed.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cov = gen_covariates(cfg.schema, cfg.n, &mut rng)?;
    let graph = build_graph(&cfg.graph, &cov.x, cfg.n, &mut rng)?;
    let (_, base) = gen_truth(&cov.x, cfg.schema, &mut rng)?;
    let assignment = assign_treatment(cfg.assignment, &cov.x, &mut rng)?;
    let t = assignment.t;
    let exposure = graph.exposure(&t)?;
    let delta = gen_spillover(&graph, &t, &base.tau, cfg.alpha, cfg.order())?;
    let y = gen_response(&base.y0, &base.tau, &delta, &t, cfg.response, cfg.kappa_nl, cfg.noise_sd, &mut rng)?;
    let split = make_splits(cfg.n, &mut rng);
    let ds = Dataset {
        raw: cov.raw,
        x: cov.x,
        names: cov.names,
        graph,
        t,
        exposure,
        y,
        split,
        truth: Some(Truth { y0: base.y0, tau: base.tau, delta }),
        config: Some(cfg.clone()),
    };
    ds.validate()?;
    Ok(ds)
}

pub const COVARIATES_FILE: &str = "covariates.csv";
pub const EDGES_FILE: &str = "edges.txt";
pub const ASSIGN_FILE: &str = "assign.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CONFIG_FILE: &str = "generate.toml";

fn csv_err(e: csv::Error) -> Error {
    Error::Csv { row: e.position().map_or(0, |p| p.line() as usize), col: 0, msg: e.to_string() }
}

fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

impl Dataset {
    /// Writes covariates.csv, edges.txt, assign.csv, truth.csv (when
    /// synthetic) and generate.toml (when generated).
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;

        let mut w = csv::Writer::from_path(dir.join(COVARIATES_FILE)).map_err(csv_err)?;
        w.write_record(&self.names).map_err(csv_err)?;
        for i in 0..self.n() {
            w.write_record(self.raw.row(i).iter().map(|v| fmt_num(*v))).map_err(csv_err)?;
        }
        w.flush()?;

        write_edge_list(&self.graph, dir.join(EDGES_FILE))?;

        let mut w = csv::Writer::from_path(dir.join(ASSIGN_FILE)).map_err(csv_err)?;
        w.write_record(["T", "G", "Y", "split"]).map_err(csv_err)?;
        for i in 0..self.n() {
            w.write_record([
                fmt_num(self.t[i]),
                fmt_num(self.exposure[i]),
                fmt_num(self.y[i]),
                self.split[i].as_str().into(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        if let Some(tr) = &self.truth {
            let mut w = csv::Writer::from_path(dir.join(TRUTH_FILE)).map_err(csv_err)?;
            w.write_record(["y0", "tau", "delta"]).map_err(csv_err)?;
            for i in 0..self.n() {
                w.write_record([fmt_num(tr.y0[i]), fmt_num(tr.tau[i]), fmt_num(tr.delta[i])]).map_err(csv_err)?;
            }
            w.flush()?;
        }
        if let Some(cfg) = &self.config {
            let text = toml::to_string(cfg).map_err(|e| Error::invalid(format!("config serialization: {e}")))?;
            fs::write(dir.join(CONFIG_FILE), text)?;
        }
        Ok(())
    }

    /// Reads a directory written by [`Dataset::save_dir`]. Empty Y cells
    /// load as NaN; truth.csv and generate.toml are optional.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let (raw, names) = parse_numeric_csv(&fs::read_to_string(dir.join(COVARIATES_FILE))?)?;
        let n = raw.rows();
        let x = standardize_columns(&raw);
        let graph = load_edge_list(dir.join(EDGES_FILE), n)?;

        let assign = fs::read_to_string(dir.join(ASSIGN_FILE))?;
        let mut rdr = csv::Reader::from_reader(assign.as_bytes());
        let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header != ["T", "G", "Y", "split"] {
            return Err(Error::Csv { row: 1, col: 0, msg: format!("expected header T,G,Y,split, got {header:?}") });
        }
        let (mut t, mut exposure, mut y, mut split) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 4 {
                return Err(Error::Csv { row, col: rec.len(), msg: "expected 4 cells".into() });
            }
            let num = |c: usize, allow_blank: bool| -> Result<f64> {
                let cell = rec[c].trim();
                if allow_blank && cell.is_empty() {
                    return Ok(f64::NAN);
                }
                cell.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Csv {
                    row,
                    col: c + 1,
                    msg: format!("non-numeric cell {cell:?}"),
                })
            };
            t.push(num(0, false)?);
            exposure.push(num(1, false)?);
            y.push(num(2, true)?);
            split.push(Split::parse(rec[3].trim()).ok_or_else(|| Error::Csv {
                row,
                col: 4,
                msg: format!("unknown split {:?}", &rec[3]),
            })?);
        }
        if t.len() != n {
            return Err(Error::shape(format!("assign.csv has {} rows for {n} nodes", t.len())));
        }

        let truth_path = dir.join(TRUTH_FILE);
        let truth = if truth_path.exists() {
            let (m, _) = parse_numeric_csv(&fs::read_to_string(truth_path)?)?;
            if m.shape() != (n, 3) {
                return Err(Error::shape(format!("truth.csv is {:?}, expected ({n}, 3)", m.shape())));
            }
            Some(Truth { y0: m.column_values(0), tau: m.column_values(1), delta: m.column_values(2) })
        } else {
            None
        };
        let cfg_path = dir.join(CONFIG_FILE);
        let config = if cfg_path.exists() {
            Some(
                toml::from_str(&fs::read_to_string(cfg_path)?)
                    .map_err(|e| Error::invalid(format!("{CONFIG_FILE}: {e}")))?,
            )
        } else {
            None
        };
        let ds = Dataset { raw, x, names, graph, t, exposure, y, split, truth, config };
        ds.validate()?;
        Ok(ds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(response: ResponseModel, noise: f64) -> GenConfig {
        GenConfig {
            n: 120,
            graph: GraphSource::Knn { k: 4, metric: Metric::Cosine },
            response,
            noise_sd: noise,
            kappa_nl: 0.2,
            ..GenConfig::wave1(120, 17)
        }
    }

    #[test]
    fn g0_reconstruction() {
        let d = generate(&small(ResponseModel::G0, 0.0)).unwrap();
        let tr = d.truth().unwrap();
        for i in 0..d.n() {
            assert!((d.y[i] - tr.y0[i] - d.t[i] * tr.tau[i] - tr.delta[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn split_fractions() {
        let d = generate(&GenConfig::wave1(1000, 3)).unwrap();
        assert_eq!(d.indices(Split::Train).len(), 800);
        assert_eq!(d.indices(Split::Val).len(), 50);
        assert_eq!(d.indices(Split::Test).len(), 150);
        assert!(d.exposure.iter().all(|g| (0.0..=1.0).contains(g)));
    }

    #[test]
    fn deterministic_and_roundtrip() {
        let cfg = small(ResponseModel::G2, 0.1);
        let a = generate(&cfg).unwrap();
        assert_eq!(a, generate(&cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        a.save_dir(dir.path()).unwrap();
        let b = Dataset::load_dir(dir.path()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn withheld_outcomes_load_as_nan() {
        let a = generate(&small(ResponseModel::G0, 0.1)).unwrap().without_test_outcomes();
        let dir = tempfile::tempdir().unwrap();
        a.save_dir(dir.path()).unwrap();
        let b = Dataset::load_dir(dir.path()).unwrap();
        for i in b.indices(Split::Test) {
            assert!(b.y[i].is_nan());
        }
        assert!(b.indices(Split::Train).iter().all(|&i| b.y[i] == a.y[i]));
    }

    #[test]
    fn invalid_configs() {
        assert!(generate(&GenConfig::wave1(1, 0)).is_err());
        let mut c = GenConfig::wave1(50, 0);
        c.assignment = AssignMode::Randomized { p: 1.0 };
        assert!(generate(&c).is_err());
        c = GenConfig::wave1(50, 0);
        c.alpha = -1.0;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn config_toml_roundtrip() {
        let c = GenConfig { spillover_order: Some(2), ..GenConfig::wave1(10, 1) };
        let s = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<GenConfig>(&s).unwrap(), c);
    }
}
