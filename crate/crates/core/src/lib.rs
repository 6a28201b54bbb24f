//! Scalar-generic numeric kernels and exact discrete multi-marginal optimal
//! transport.
//!
//! Everything in this crate is written against the [`Real`] trait so the same
//! code runs in `f32` or `f64`. The concrete aliases below fix the scalar to
//! `f64`, which is what the rest of the workspace uses and what every
//! tolerance in the test suites assumes.

pub mod numkit;
pub mod ot;

pub use numkit::{DenseMatrix, GradCheckReport, NumError, Real, RngStream};
pub use ot::{
    BarycenterSolution, Cost, Coupling, DiscreteDist, DualPotentials, Feasibility, GaussianSpec,
    OtError, TransportSolution,
};

/// Row-major `f64` matrix.
pub type Matrix = DenseMatrix<f64>;
/// Row-major `f32` matrix.
pub type Matrix32 = DenseMatrix<f32>;
/// Finite-support distribution over `f64` points.
pub type Dist = DiscreteDist<f64>;
/// Finite-support distribution over `f32` points.
pub type Dist32 = DiscreteDist<f32>;
/// Multi-marginal coupling with `f64` weights.
pub type Coupling64 = Coupling<f64>;
/// Tabulated dual potentials in `f64`.
pub type Potentials = DualPotentials<f64>;
/// Gaussian with `f64` mean and covariance.
pub type Gaussian = GaussianSpec<f64>;
