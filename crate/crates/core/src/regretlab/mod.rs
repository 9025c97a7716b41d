//! Numerical checks of the networked concentration inequality, the policy
//! regret bounds and the spillover Lipschitz constant.

pub mod bounds;
pub mod concentration;
pub mod hypergraph;
pub mod lipschitz;

pub use bounds::{
    claim1_curve, claim1_value, regret_bound, BoundInputs, BoundReport, Claim1Row, Covering, RegretBound,
};
pub use concentration::{
    concentration_check, eps_grid, networked_tail_bound, BaseDist, ConcentrationReport, TailRow, XiFamily,
};
pub use hypergraph::{build_hypergraph, Hypergraph};
pub use lipschitz::{lipschitz_check, lipschitz_ratio, lipschitz_tight_ratio, LipschitzReport};
