//! Named parameter storage, Glorot initialization and the JSON document
//! used to save and reload trained weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::matrix::Matrix;
use crate::numkit::tape::{Tape, Var};
use crate::scalar::Scalar;

pub const PARAMS_FORMAT: &str = "netcausal-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    names: Vec<String>,
    values: Vec<Matrix<F>>,
}

impl<F: Scalar> Default for Params<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Params<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<F>) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn add_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        self.add(name, glorot_uniform(fan_in, fan_out, rng))
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> ParamId {
        self.add(name, Matrix::zeros(rows, cols))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<F> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<F> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values(&self) -> &[Matrix<F>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix<F>] {
        &mut self.values
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Places every parameter on the tape; `trainable = false` freezes them.
    pub fn attach(&self, tape: &mut Tape<F>, trainable: bool) -> Vec<Var> {
        self.values.iter().map(|v| if trainable { tape.param(v.clone()) } else { tape.constant(v.clone()) }).collect()
    }

    /// Gradients for each attached parameter after `tape.backward`.
    pub fn collect_grads(&self, tape: &Tape<F>, vars: &[Var]) -> Vec<Matrix<F>> {
        vars.iter()
            .zip(&self.values)
            .map(|(&v, m)| tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())))
            .collect()
    }

    pub fn to_document(&self) -> ParamsDocument {
        ParamsDocument {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            tensors: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(name, m)| TensorRecord {
                    name: name.clone(),
                    rows: m.rows(),
                    cols: m.cols(),
                    values: m.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ParamsDocument) -> Result<Self> {
        if doc.format != PARAMS_FORMAT {
            return Err(Error::invalid(format!("unknown parameter format {:?}", doc.format)));
        }
        if doc.version != PARAMS_VERSION {
            return Err(Error::invalid(format!("unsupported parameter version {}", doc.version)));
        }
        let mut p = Self::new();
        for t in &doc.tensors {
            let vals = t.values.iter().map(|&v| F::lit(v)).collect();
            p.add(t.name.clone(), Matrix::from_vec(t.rows, t.cols, vals)?);
        }
        Ok(p)
    }
}

/// Versioned, shape-tagged, row-major parameter dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDocument {
    pub format: String,
    pub version: u32,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

/// Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<F: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| F::lit(rng.random_range(-a..a))).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("sized")
}
