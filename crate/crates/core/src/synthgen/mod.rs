//! Semi-synthetic experiments: covariates, ground-truth effects, spillover,
//! response models, treatment assignment and dataset IO.

pub mod assign;
pub mod covariates;
pub mod dataset;
pub mod response;
pub mod spillover;
pub mod truth;

pub use assign::{assign_treatment, AssignMode, Assignment};
pub use covariates::{
    gen_covariates, load_covariates_csv, parse_covariates_csv, standardize_columns, Covariates, Schema,
};
pub use dataset::{generate, make_splits, Dataset, GenConfig, GraphSource, Split, Truth};
pub use response::{gen_response, ResponseModel};
pub use spillover::{gen_spillover, Spillover};
pub use truth::{gen_truth, BaseTruth, RandomNet, TruthModel};
