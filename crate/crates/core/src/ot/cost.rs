use super::OtError;
use crate::numkit::linalg::solve;
use crate::numkit::{dist_sq, DenseMatrix, Real};

/// Binary ground cost `c~`.
///
/// `W2` carries the factor one half: `c~(x, x') = ½‖x − x'‖²`. `W1` is the
/// plain Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cost {
    W1,
    W2,
}

impl Cost {
    #[inline]
    pub fn binary<T: Real>(self, x: &[T], y: &[T]) -> T {
        match self {
            Cost::W1 => dist_sq(x, y).sqrt(),
            Cost::W2 => T::lit(0.5) * dist_sq(x, y),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Cost::W1 => "w1",
            Cost::W2 => "w2",
        }
    }
}

impl std::str::FromStr for Cost {
    type Err = OtError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "w1" => Ok(Cost::W1),
            "w2" => Ok(Cost::W2),
            other => Err(OtError::InvalidArgument(format!("unknown cost '{other}' (expected w1 or w2)"))),
        }
    }
}

/// Stopping residual `‖x_{k+1} − x_k‖` for the Weiszfeld iteration.
pub const WEISZFELD_TOL: f64 = 1e-10;
/// Iteration cap for the Weiszfeld iteration.
pub const WEISZFELD_MAX_ITER: usize = 10_000;
/// Added to every distance in the Weiszfeld weights so iterates that land on
/// an input point stay finite.
pub const WEISZFELD_DAMPING: f64 = 1e-12;

/// Infimal-convolution cost `min_z sum_i c~(z, x_i)` and its minimiser.
///
/// W2: the minimiser is the mean. W1: the geometric median.
pub fn nary_cost<T: Real, P: AsRef<[T]>>(points: &[P], cost: Cost) -> Result<(T, Vec<T>), OtError> {
    let Some(first) = points.first() else {
        return Err(OtError::InvalidArgument("n-ary cost needs at least one point".into()));
    };
    let d = first.as_ref().len();
    if let Some(p) = points.iter().find(|p| p.as_ref().len() != d) {
        return Err(OtError::DimensionMismatch { expected: d, got: p.as_ref().len() });
    }
    let z = match cost {
        Cost::W2 => mean(points, d),
        Cost::W1 => geometric_median(points)?,
    };
    let value = points.iter().map(|p| cost.binary(&z, p.as_ref())).sum();
    Ok((value, z))
}

fn mean<T: Real, P: AsRef<[T]>>(points: &[P], d: usize) -> Vec<T> {
    let inv = T::one() / T::lit(points.len() as f64);
    let mut z = vec![T::zero(); d];
    for p in points {
        for (zi, &pi) in z.iter_mut().zip(p.as_ref()) {
            *zi = *zi + pi;
        }
    }
    z.iter_mut().for_each(|v| *v = *v * inv);
    z
}

/// Geometric median of a point multiset.
///
/// Input points are first tested with the vertex optimality condition
/// `‖sum_{i≠j} w_i (x_j − x_i)/‖x_j − x_i‖‖ ≤ w_j`; if none passes, the
/// median lies off the input points and damped Weiszfeld iteration,
/// safeguarded Newton steps mixed in, converges to it from the mean.
pub fn geometric_median<T: Real, P: AsRef<[T]>>(points: &[P]) -> Result<Vec<T>, OtError> {
    let d = points[0].as_ref().len();
    let mut distinct: Vec<(&[T], T)> = Vec::new();
    for p in points {
        let p = p.as_ref();
        match distinct.iter_mut().find(|(q, _)| *q == p) {
            Some((_, w)) => *w = *w + T::one(),
            None => distinct.push((p, T::one())),
        }
    }
    if distinct.len() == 1 {
        return Ok(distinct[0].0.to_vec());
    }
    for (j, &(xj, wj)) in distinct.iter().enumerate() {
        let mut pull = vec![T::zero(); d];
        for (i, &(xi, wi)) in distinct.iter().enumerate() {
            if i == j {
                continue;
            }
            let r = dist_sq(xj, xi).sqrt();
            for (k, g) in pull.iter_mut().enumerate() {
                *g = *g + wi * (xj[k] - xi[k]) / r;
            }
        }
        let slack = T::lit(64.0) * T::epsilon() * T::lit(points.len() as f64);
        if pull.iter().map(|&g| g * g).sum::<T>().sqrt() <= wj + slack {
            return Ok(xj.to_vec());
        }
    }

    let damping = T::lit(WEISZFELD_DAMPING);
    let mut z = mean(points, d);
    let scale = distinct.iter().fold(T::one(), |s, (x, _)| x.iter().fold(s, |s, v| s.max(v.abs())));
    let tol = T::lit(WEISZFELD_TOL).max(T::lit(16.0) * T::epsilon() * scale);
    let objective = |z: &[T]| distinct.iter().map(|&(x, w)| w * dist_sq(z, x).sqrt()).sum::<T>();
    let mut residual = T::infinity();
    for _ in 0..WEISZFELD_MAX_ITER {
        let mut num = vec![T::zero(); d];
        let mut den = T::zero();
        let mut grad = vec![T::zero(); d];
        let mut hess = DenseMatrix::zeros(d, d);
        for &(x, w) in &distinct {
            let r = dist_sq(&z, x).sqrt() + damping;
            let inv = w / r;
            den = den + inv;
            for k in 0..d {
                num[k] = num[k] + inv * x[k];
                let dk = z[k] - x[k];
                grad[k] = grad[k] + inv * dk;
                for l in 0..d {
                    let outer = dk * (z[l] - x[l]) / (r * r);
                    let eye = if k == l { T::one() } else { T::zero() };
                    hess[(k, l)] = hess[(k, l)] + inv * (eye - outer);
                }
            }
        }
        let mut next: Vec<T> = num.iter().map(|&n| n / den).collect();
        // Weiszfeld slows to a crawl when the median sits next to an input
        // point; a Newton step is taken instead whenever it does better.
        if let Ok(step) = solve(&hess, &grad) {
            let newton: Vec<T> = z.iter().zip(&step).map(|(&a, &s)| a - s).collect();
            if newton.iter().all(|v| v.is_finite()) && objective(&newton) < objective(&next) {
                next = newton;
            }
        }
        residual = dist_sq(&next, &z).sqrt();
        z = next;
        if residual <= tol {
            return Ok(z);
        }
    }
    Err(OtError::NoConvergence { iterations: WEISZFELD_MAX_ITER, residual: residual.as_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn w2_two_points() {
        let (v, z) = nary_cost(&[vec![0.0], vec![2.0]], Cost::W2).unwrap();
        assert_eq!(v, 1.0);
        assert_eq!(z, vec![1.0]);
    }

    #[test]
    fn w1_three_points_on_a_line() {
        let (v, z) = nary_cost(&[vec![0.0], vec![1.0], vec![2.0]], Cost::W1).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(z, vec![1.0]);
    }

    #[test]
    fn w1_even_count_picks_a_median_in_the_interval() {
        let (v, z) = nary_cost(&[vec![0.0f64], vec![1.0], vec![3.0], vec![7.0]], Cost::W1).unwrap();
        assert!((v - 9.0).abs() < 1e-12);
        assert!(z[0] >= 1.0 && z[0] <= 3.0);
    }

    #[test]
    fn w1_equilateral_triangle_center() {
        let h = 3f64.sqrt() / 2.0;
        let pts = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.5, h]];
        let (v, z) = nary_cost(&pts, Cost::W1).unwrap();
        assert!((z[0] - 0.5).abs() < 1e-9 && (z[1] - h / 3.0).abs() < 1e-9);
        assert!((v - 3f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn w1_obtuse_triangle_vertex() {
        // Angle at the origin exceeds 120 degrees, so the median is the vertex.
        let pts = [vec![0.0, 0.0], vec![1.0, 0.1], vec![-1.0, 0.1]];
        let (_, z) = nary_cost(&pts, Cost::W1).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(nary_cost(&[vec![0.0], vec![1.0, 2.0]], Cost::W2).is_err());
    }

    #[test]
    fn works_in_f32() {
        let (v, z) = nary_cost(&[vec![0.0f32, 0.0], vec![2.0, 2.0]], Cost::W2).unwrap();
        assert!((v - 2.0).abs() < 1e-6);
        assert_eq!(z, vec![1.0, 1.0]);
    }
}
