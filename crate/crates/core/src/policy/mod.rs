//! Capacity-constrained treatment policies: policy networks, plug-in and
//! true utilities, constrained training and comparison against randomized
//! assignments.

pub mod net;
pub mod train;
pub mod utility;

pub use net::{PolicyKind, PolicyNet};
pub use train::{
    evaluate_improvement, evaluate_probabilities, policy_loss_on_tape, random_capacity_policy, top_fraction,
    train_policy, treated_rate, PolicyConfig, PolicyModel, UtilityReport,
};
pub use utility::{utility_capped, utility_true, PlugInUtility, TrueWorld};
