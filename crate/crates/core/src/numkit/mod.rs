//! Dense numeric kernels, splittable randomness and a finite-difference
//! gradient oracle.

mod gradcheck;
pub mod linalg;
mod matrix;
mod rng;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive};

pub use gradcheck::{check_gradient, finite_diff_grad, relative_error, GradCheckReport, DEFAULT_FD_STEP, REL_ERR_FLOOR};
pub use matrix::{dist_sq, dot, norm_sq, DenseMatrix};
pub use rng::{rng_draw_uniform, RngStream};

/// Floating point scalar used throughout the crate (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into `Self`.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    /// Tolerance used for pivots and zero tests in direct solvers.
    #[inline]
    fn pivot_tol() -> Self {
        Self::epsilon().sqrt() * Self::lit(1e-2)
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, thiserror::Error)]
pub enum NumError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("non-finite value at coordinate {coordinate}")]
    NonFinite { coordinate: usize },
    #[error("no convergence after {iterations} iterations (last estimate {last})")]
    NoConvergence { iterations: usize, last: f64 },
    #[error("matrix is singular")]
    Singular,
}
