//! GNN causal estimator: covariate encoder Φ, treatment-masked graph
//! layers, per-arm outcome heads, HSIC balancing and ITE readout.

pub mod metrics;
pub mod model;
pub mod train;

pub use metrics::{evaluate_split, metrics, Metrics, Predictions};
pub use model::{
    Arm, BalanceTarget, EstimatorConfig, EstimatorModel, GnnLayerIds, LossInputs, LossVars, ModelFile, Representation,
};
pub use train::{
    eval_loss, outcome_scale, representation_hsic, train_estimator, EpochRecord, TrainConfig, TrainReport,
};
