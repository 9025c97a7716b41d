//! Dense numerics, reverse-mode differentiation and the network building blocks.

pub mod gradcheck;
pub mod gumbel;
pub mod hsic;
pub mod layers;
pub mod matrix;
pub mod optim;
pub mod params;
pub mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use gumbel::{gumbel_noise, gumbel_softmax, gumbel_softmax_sample, GumbelSample};
pub use hsic::{hsic, hsic_value, Bandwidth};
pub use layers::{dropout, gcn_layer, onegnn_layer, sage_layer, GnnKind, Linear, Mlp};
pub use matrix::{Matrix, SparseMatrix};
pub use optim::{adam_step, Adam, AdamConfig};
pub use params::{ParamId, Params, ParamsDocument};
pub use tape::{Tape, Var};
