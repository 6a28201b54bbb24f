//! Gaussian measures and the closed-form Bures-Wasserstein distance.

use super::OtError;
use crate::numkit::linalg::{sqrt_psd, sym_eigen};
use crate::numkit::{dist_sq, DenseMatrix, Real};

/// Largest entrywise asymmetry tolerated in a covariance matrix.
pub const COVARIANCE_SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSpec<T> {
    mean: Vec<T>,
    covariance: DenseMatrix<T>,
}

impl<T: Real> GaussianSpec<T> {
    /// Checks dimensions, symmetry and strict positive definiteness.
    pub fn new(mean: Vec<T>, covariance: DenseMatrix<T>) -> Result<Self, OtError> {
        let d = mean.len();
        if d == 0 {
            return Err(OtError::InvalidArgument("Gaussian needs dimension at least 1".into()));
        }
        if covariance.shape() != (d, d) {
            return Err(OtError::DimensionMismatch { expected: d, got: covariance.rows() });
        }
        if mean.iter().any(|m| !m.is_finite()) || !covariance.is_finite() {
            return Err(OtError::InvalidArgument("Gaussian parameters must be finite".into()));
        }
        if covariance.asymmetry() > T::lit(COVARIANCE_SYMMETRY_TOL) {
            return Err(OtError::InvalidArgument(format!("covariance is not symmetric (asymmetry {})", covariance.asymmetry())));
        }
        let (values, _) = sym_eigen(&covariance)?;
        if values[0] <= T::zero() {
            return Err(OtError::InvalidArgument(format!("covariance is not positive definite (eigenvalue {})", values[0])));
        }
        Ok(Self { mean, covariance })
    }

    /// Isotropic 1-D Gaussian `N(mean, std²)`.
    pub fn scalar(mean: T, std: T) -> Result<Self, OtError> {
        Self::new(vec![mean], DenseMatrix::from_vec(1, 1, vec![std * std])?)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn covariance(&self) -> &DenseMatrix<T> {
        &self.covariance
    }
}

/// `½ (‖m_a − m_b‖² + tr(Σ_a + Σ_b − 2 (Σ_a^½ Σ_b Σ_a^½)^½))`, i.e. half the
/// usual squared 2-Wasserstein distance, matching `c~ = ½‖·‖²`.
pub fn gaussian_w2<T: Real>(a: &GaussianSpec<T>, b: &GaussianSpec<T>) -> Result<T, OtError> {
    if a.dim() != b.dim() {
        return Err(OtError::DimensionMismatch { expected: a.dim(), got: b.dim() });
    }
    let root_a = sqrt_psd(&a.covariance)?;
    let cross = sqrt_psd(&root_a.matmul(&b.covariance).matmul(&root_a).symmetrized())?;
    let bures = a.covariance.trace() + b.covariance.trace() - T::lit(2.0) * cross.trace();
    // The trace term is nonnegative in exact arithmetic.
    Ok(T::lit(0.5) * (dist_sq(&a.mean, &b.mean) + bures.max(T::zero())))
}
