//! Exact discrete multi-marginal optimal transport with infimal-convolution
//! costs `c(x_1..x_n) = min_z sum_i c~(z, x_i)`.
//!
//! The pieces line up as primal and dual routes to the same number:
//! [`nary_ot_exact`] solves the joint coupling LP, [`barycenter_value`] solves
//! the barycenter LP over a candidate support, and [`dual_value`] evaluates
//! c-transform dual potentials. The 1-D quantile machinery in
//! [`pushforward`] and the Gaussian closed form in [`gaussian`] serve as
//! independent oracles.

mod cost;
mod dist;
mod dual;
pub mod gaussian;
pub mod io;
mod lemma;
pub mod lp;
pub mod pushforward;
mod search;
mod solve;
mod transport;

pub use cost::{geometric_median, nary_cost, Cost, WEISZFELD_DAMPING, WEISZFELD_MAX_ITER, WEISZFELD_TOL};
pub use dist::{Coupling, DiscreteDist};
pub use dual::{ctransform, dual_value, lift_support_potentials, DualPotentials, Feasibility, DUAL_FEASIBILITY_TOL};
pub use gaussian::{gaussian_w2, GaussianSpec};
pub use lemma::{lemma1_check, lemma1_check_in_dim, quadratic_ctransform, LEMMA1_DIM};
pub use pushforward::{pushforward_check, w1_distance_1d};
pub use search::{quantized_dual_search, DualSearchResult, DUAL_SEARCH_CAP};
pub use solve::{
    barycenter_value, binary_ot_exact, nary_ot_exact, nary_ot_exact_with_cap, tuple_minimizer_support, BarycenterSolution,
    TransportSolution, DEFAULT_JOINT_CAP,
};

use crate::numkit::NumError;
use lp::LpError;

#[derive(Debug, thiserror::Error)]
pub enum OtError {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("joint support of {size} atoms exceeds the cap of {cap}")]
    TooLarge { size: usize, cap: usize },
    #[error("dual potentials violate their feasibility constraint by {violation:e}")]
    Constraint { violation: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("geometric median did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Numeric(#[from] NumError),
}
