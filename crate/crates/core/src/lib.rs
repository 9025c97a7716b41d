//! Causal-effect estimation under network interference.
//!
//! The crate covers graph construction, a small reverse-mode numeric core
//! with GCN / GraphSAGE / 1-GNN layers, semi-synthetic data generation,
//! GNN-based outcome and effect estimators with HSIC balancing, DA/DR
//! baselines, capacity-constrained policy learning, and Monte-Carlo checks
//! of the networked concentration and regret bounds.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod numkit;
pub mod policy;
pub mod regretlab;
pub mod scalar;
pub mod synthgen;

pub use error::{Error, Result};
pub use graph::{Graph, GraphOps, NormAdjacency};
pub use scalar::Scalar;

pub type Matrix64 = numkit::Matrix<f64>;
pub type Matrix32 = numkit::Matrix<f32>;
pub type Tape64 = numkit::Tape<f64>;
pub type Tape32 = numkit::Tape<f32>;
pub type Params64 = numkit::Params<f64>;
pub type GraphOps64 = graph::GraphOps<f64>;
