use rand::Rng;
use rand_distr::StandardNormal;

use super::OtError;
use crate::numkit::linalg::{solve, sym_eigen};
use crate::numkit::{dist_sq, dot, norm_sq, DenseMatrix, Real, RngStream};

/// Dimension of the random quadratics drawn by [`lemma1_check`].
pub const LEMMA1_DIM: usize = 3;

/// Closed-form `φ^c~(x) = min_y ½‖y − x‖² + φ(y)` for the quadratic
/// `φ(y) = ½ yᵀVy + bᵀy` with `I + V` positive definite.
///
/// The minimiser solves `(I + V) y = x − b`.
pub fn quadratic_ctransform<T: Real>(v: &DenseMatrix<T>, b: &[T], x: &[T]) -> Result<T, OtError> {
    let d = x.len();
    if v.shape() != (d, d) || b.len() != d {
        return Err(OtError::DimensionMismatch { expected: d, got: b.len().max(v.rows()) });
    }
    let mut shifted = v.clone();
    for i in 0..d {
        shifted[(i, i)] = shifted[(i, i)] + T::one();
    }
    let rhs: Vec<T> = x.iter().zip(b).map(|(&xi, &bi)| xi - bi).collect();
    let y = solve(&shifted, &rhs)?;
    Ok(quadratic(v, b, &y) + T::lit(0.5) * dist_sq(&y, x))
}

fn quadratic<T: Real>(v: &DenseMatrix<T>, b: &[T], x: &[T]) -> T {
    T::lit(0.5) * dot(x, &v.matvec(x)) + dot(b, x)
}

/// Draws `num_points` random pairs (quadratic `φ` with spectral norm of `V`
/// at most `gamma`, query point `x`) and checks
/// `φ^c~(x) ≥ φ(x) − ‖∇φ(x)‖² / (2(1 − γ))`.
///
/// Returns the largest amount by which the right side exceeds the left
/// (0 when the inequality holds everywhere).
pub fn lemma1_check(gamma: f64, num_points: usize, stream: RngStream) -> Result<f64, OtError> {
    lemma1_check_in_dim(gamma, num_points, LEMMA1_DIM, stream)
}

pub fn lemma1_check_in_dim(gamma: f64, num_points: usize, dim: usize, stream: RngStream) -> Result<f64, OtError> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(OtError::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    if dim == 0 {
        return Err(OtError::InvalidArgument("dimension must be positive".into()));
    }
    let mut rng = stream.generator();
    let mut worst = 0.0f64;
    for _ in 0..num_points {
        let (v, b) = random_quadratic(&mut rng, gamma, dim)?;
        let x: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let lhs = quadratic_ctransform(&v, &b, &x)?;
        let grad: Vec<f64> = v.matvec(&x).iter().zip(&b).map(|(g, bi)| g + bi).collect();
        let rhs = quadratic(&v, &b, &x) - norm_sq(&grad) / (2.0 * (1.0 - gamma));
        worst = worst.max(rhs - lhs);
    }
    Ok(worst)
}

/// Symmetric `V = Q diag(λ) Qᵀ` with `λ ~ Unif[−γ, γ]` and `Q` the
/// eigenvectors of a random symmetric matrix, plus `b ~ N(0, I)`.
fn random_quadratic<R: Rng>(rng: &mut R, gamma: f64, dim: usize) -> Result<(DenseMatrix<f64>, Vec<f64>), OtError> {
    let raw = DenseMatrix::from_vec(dim, dim, (0..dim * dim).map(|_| rng.sample(StandardNormal)).collect())?;
    let (_, q) = sym_eigen(&raw.symmetrized())?;
    let lambdas: Vec<f64> = (0..dim).map(|_| gamma * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let v = q.matmul(&DenseMatrix::diag(&lambdas)).matmul(&q.transpose()).symmetrized();
    let b = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    Ok((v, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_quadratic_has_zero_transform() {
        let v = DenseMatrix::zeros(2, 2);
        assert_eq!(quadratic_ctransform(&v, &[0.0, 0.0], &[0.3, -1.0]).unwrap(), 0.0);
    }

    #[test]
    fn scalar_case_matches_hand_computation() {
        // φ(y) = ½γy²: minimiser y = x/(1+γ), transform ½γx²/(1+γ).
        let gamma: f64 = 0.5;
        let v = DenseMatrix::from_vec(1, 1, vec![gamma]).unwrap();
        let lhs = quadratic_ctransform(&v, &[0.0], &[1.0]).unwrap();
        assert!((lhs - gamma / (2.0 * (1.0 + gamma))).abs() < 1e-15);
        let rhs = gamma / 2.0 - gamma * gamma / (2.0 * (1.0 - gamma));
        assert!(lhs >= rhs);
    }

    #[test]
    fn rejects_gamma_at_one() {
        assert!(lemma1_check(1.0, 10, RngStream::new(0, 0)).is_err());
        assert!(lemma1_check(-0.1, 10, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn random_sweep_holds() {
        for gamma in [0.0, 0.5, 0.9] {
            assert!(lemma1_check(gamma, 200, RngStream::new(3, 1)).unwrap() <= 1e-10);
        }
    }
}
