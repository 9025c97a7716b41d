use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Schema {
    #[serde(rename = "wave1-like")]
    Wave1Like,
    #[serde(rename = "pokec-like")]
    PokecLike,
}

impl Schema {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wave1-like" | "wave1" => Ok(Schema::Wave1Like),
            "pokec-like" | "pokec" => Ok(Schema::PokecLike),
            other => Err(Error::invalid(format!("unknown schema {other:?} (expected wave1-like or pokec-like)"))),
        }
    }

    pub fn features(self) -> &'static [Feature] {
        match self {
            Schema::Wave1Like => &WAVE1,
            Schema::PokecLike => &POKEC,
        }
    }

    pub fn feature_names(self) -> Vec<String> {
        self.features().iter().map(|f| f.name.to_string()).collect()
    }

    /// Spillover reach used by the simulator for this schema.
    pub fn spillover_order(self) -> usize {
        match self {
            Schema::Wave1Like => 1,
            Schema::PokecLike => 2,
        }
    }

    pub fn column(self, name: &str) -> usize {
        self.features().iter().position(|f| f.name == name).expect("known feature")
    }
}

/// One questionnaire/profile attribute, drawn uniformly from `lo..=hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Feature {
    pub name: &'static str,
    pub lo: i32,
    pub hi: i32,
}

const fn f(name: &'static str, lo: i32, hi: i32) -> Feature {
    Feature { name, lo, hi }
}

/// Yes/no answers are {0, 1}; frequency answers 0..=3; school grades 1..=4 (A..D).
pub static WAVE1: [Feature; 19] = [
    f("H1GH52", 0, 1),
    f("H1ED3", 0, 1),
    f("H1ED5", 0, 1),
    f("H1ED7", 0, 1),
    f("H1HS1", 0, 1),
    f("H1HS3", 0, 1),
    f("H1WP17B", 0, 1),
    f("H1TO51", 0, 1),
    f("H1TO53", 0, 1),
    f("H1NB5", 0, 1),
    f("H1EE3", 0, 1),
    f("PA57D", 0, 1),
    f("H1DA5", 0, 3),
    f("H1DA7", 0, 3),
    f("H1ED11", 1, 4),
    f("H1ED12", 1, 4),
    f("H1ED13", 1, 4),
    f("H1ED14", 1, 4),
    f("H1DS12", 0, 3),
];

pub static POKEC: [Feature; 9] = [
    f("gender", 0, 1),
    f("age", 15, 60),
    f("height", 140, 200),
    f("weight", 30, 200),
    f("education", 0, 3),
    f("eyesight", 0, 1),
    f("smoke", 0, 3),
    f("alcohol", 0, 3),
    f("sex", 0, 2),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Covariates {
    /// Values on the original answer scale.
    pub raw: Matrix<f64>,
    /// Column-standardized values (zero mean, unit population variance).
    pub x: Matrix<f64>,
    pub names: Vec<String>,
}

pub fn gen_covariates<R: Rng + ?Sized>(schema: Schema, n: usize, rng: &mut R) -> Result<Covariates> {
    if n < 2 {
        return Err(Error::invalid(format!("need at least 2 nodes, got {n}")));
    }
    let feats = schema.features();
    let mut raw = Matrix::zeros(n, feats.len());
    for i in 0..n {
        for (c, ft) in feats.iter().enumerate() {
            raw.set(i, c, rng.random_range(ft.lo..=ft.hi) as f64);
        }
    }
    let x = standardize_columns(&raw);
    Ok(Covariates { raw, x, names: schema.feature_names() })
}

/// (v - mean) / sd per column; constant columns are only centred.
pub fn standardize_columns(m: &Matrix<f64>) -> Matrix<f64> {
    let (n, d) = m.shape();
    let mut out = m.clone();
    for c in 0..d {
        let col = m.column_values(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        for r in 0..n {
            let v = m.get(r, c) - mean;
            out.set(r, c, if sd > 0.0 { v / sd } else { v });
        }
    }
    out
}

/// Reads a headered numeric CSV and standardizes its columns.
pub fn load_covariates_csv(path: impl AsRef<Path>) -> Result<(Matrix<f64>, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    parse_covariates_csv(&text)
}

pub fn parse_covariates_csv(text: &str) -> Result<(Matrix<f64>, Vec<String>)> {
    let raw = parse_numeric_csv(text)?;
    Ok((standardize_columns(&raw.0), raw.1))
}

/// Headered numeric CSV without any transformation. Rows are 1-based in
/// errors, counting the header as row 1.
pub(crate) fn parse_numeric_csv(text: &str) -> Result<(Matrix<f64>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv { row: 1, col: 0, msg: e.to_string() })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(Error::Csv { row: 1, col: 0, msg: "missing header".into() });
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row_no = k + 2;
        let rec = rec.map_err(|e| Error::Csv { row: row_no, col: 0, msg: e.to_string() })?;
        if rec.len() != names.len() {
            return Err(Error::Csv { row: row_no, col: rec.len(), msg: format!("expected {} cells", names.len()) });
        }
        let vals = rec
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| Error::Csv {
                    row: row_no,
                    col: c + 1,
                    msg: format!("non-numeric cell {cell:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::invalid(format!("covariate file has {} data row(s); need at least 2", rows.len())));
    }
    Ok((Matrix::from_rows(&rows)?, names))
}
