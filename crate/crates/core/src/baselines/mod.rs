//! Non-graph meta-learner baselines (domain adaptation, doubly robust) that
//! see the exposure only as an extra feature.

pub mod meta;
pub mod regressor;

pub use meta::{
    dr_pseudo_outcomes, fit_da, fit_dr, fit_meta, fit_propensity, with_exposure, MetaKind, MetaLearner, Propensity,
    PROPENSITY_CLIP,
};
pub use regressor::{Regressor, RegressorKind};
