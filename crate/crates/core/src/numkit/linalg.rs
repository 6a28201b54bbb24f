//! Small dense linear algebra: Gaussian elimination, Jacobi eigensolver,
//! SPD square root and power-iteration spectral norm.

use super::matrix::{dot, norm_sq};
use super::{DenseMatrix, NumError, Real};

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve<T: Real>(a: &DenseMatrix<T>, b: &[T]) -> Result<Vec<T>, NumError> {
    let n = a.rows();
    if a.cols() != n || b.len() != n {
        return Err(NumError::Shape { expected: format!("{n}x{n} system"), got: format!("{}x{} with rhs {}", a.rows(), a.cols(), b.len()) });
    }
    let mut m = a.clone();
    let mut x = b.to_vec();
    let scale = m.max_abs().max(T::min_positive_value());
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if m[(pivot, col)].abs() <= T::epsilon() * scale * T::lit(n as f64) {
            return Err(NumError::Singular);
        }
        if pivot != col {
            for j in 0..n {
                let tmp = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = tmp;
            }
            x.swap(col, pivot);
        }
        let p = m[(col, col)];
        for i in col + 1..n {
            let factor = m[(i, col)] / p;
            if factor == T::zero() {
                continue;
            }
            for j in col..n {
                m[(i, j)] = m[(i, j)] - factor * m[(col, j)];
            }
            x[i] = x[i] - factor * x[col];
        }
    }
    for i in (0..n).rev() {
        let tail: T = (i + 1..n).map(|j| m[(i, j)] * x[j]).sum();
        x[i] = (x[i] - tail) / m[(i, i)];
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the second matrix.
pub fn sym_eigen<T: Real>(a: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>), NumError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(NumError::Shape { expected: "square matrix".into(), got: format!("{}x{}", a.rows(), a.cols()) });
    }
    let mut m = a.symmetrized();
    let mut v = DenseMatrix::identity(n);
    let total = m.frobenius_norm().max(T::min_positive_value());
    let tol = T::epsilon() * total;
    const MAX_SWEEPS: usize = 100;
    let mut sweeps = 0;
    loop {
        let off: T = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[(i, j)] * m[(i, j)]).sum();
        if off.sqrt() <= tol {
            break;
        }
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(NumError::NoConvergence { iterations: MAX_SWEEPS, last: off.sqrt().as_f64() });
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() <= T::min_positive_value() {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (apq + apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| m[(i, i)]).collect();
    let mut vectors = DenseMatrix::zeros(n, n);
    for (new_col, &old_col) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, new_col)] = v[(k, old_col)];
        }
    }
    Ok((values, vectors))
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Eigenvalues below `-tol` are rejected; tiny negative ones are clamped to 0.
pub fn sqrt_psd<T: Real>(a: &DenseMatrix<T>) -> Result<DenseMatrix<T>, NumError> {
    let (values, vectors) = sym_eigen(a)?;
    let tol = T::lit(1e3) * T::epsilon() * values.iter().fold(T::one(), |m, v| m.max(v.abs()));
    if let Some(&bad) = values.iter().find(|&&v| v < -tol) {
        return Err(NumError::InvalidArgument(format!("matrix is not positive semi-definite (eigenvalue {bad})")));
    }
    let n = a.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        let root = lambda.max(T::zero()).sqrt();
        for i in 0..n {
            let vi = vectors[(i, k)] * root;
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + vi * vectors[(j, k)];
            }
        }
    }
    Ok(out)
}

/// Largest singular value by power iteration on `A^T A`, stopping when the
/// Rayleigh quotient changes by at most `rel_tol` relatively.
pub fn spectral_norm<T: Real>(a: &DenseMatrix<T>, rel_tol: T, max_iter: usize) -> Result<T, NumError> {
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 || a.max_abs() == T::zero() {
        return Ok(T::zero());
    }
    // Start from the heaviest row plus a fixed irregular offset so the start
    // vector is never orthogonal to the top right-singular vector by accident.
    let heavy = (0..rows)
        .max_by(|&i, &j| norm_sq(a.row(i)).partial_cmp(&norm_sq(a.row(j))).unwrap_or(std::cmp::Ordering::Equal))
        .unwrap_or(0);
    let mut v: Vec<T> = a
        .row(heavy)
        .iter()
        .enumerate()
        .map(|(j, &x)| x + a.max_abs() * T::lit(1e-3 * (1.0 + ((j * 7919) % 13) as f64 / 13.0)))
        .collect();
    normalize(&mut v);
    let mut lambda = T::zero();
    for _ in 0..max_iter {
        let w = a.matvec(&v);
        let mut u = a.matvec_t(&w);
        let next = dot(&v, &u);
        normalize(&mut u);
        v = u;
        if (next - lambda).abs() <= rel_tol * next.abs() {
            return Ok(next.max(T::zero()).sqrt());
        }
        lambda = next;
    }
    Err(NumError::NoConvergence { iterations: max_iter, last: lambda.max(T::zero()).sqrt().as_f64() })
}

fn normalize<T: Real>(v: &mut [T]) {
    let n = norm_sq(v).sqrt();
    if n > T::zero() {
        v.iter_mut().for_each(|x| *x = *x / n);
    }
}
