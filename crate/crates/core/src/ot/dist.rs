use super::OtError;
use crate::numkit::Real;

/// Finite-support probability distribution over `d`-dimensional points.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDist<T> {
    points: Vec<Vec<T>>,
    weights: Vec<T>,
}

impl<T: Real> DiscreteDist<T> {
    /// Validates that the support is nonempty with a common dimension and
    /// the weights form a probability vector.
    pub fn new(points: Vec<Vec<T>>, weights: Vec<T>) -> Result<Self, OtError> {
        Self::check_shape(&points, &weights)?;
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < T::zero()) {
            return Err(OtError::InvalidDistribution(format!("weights must be finite and nonnegative, found {w}")));
        }
        let total: T = weights.iter().copied().sum();
        if (total - T::one()).abs() > Self::sum_tolerance(weights.len()) {
            return Err(OtError::InvalidDistribution(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { points, weights })
    }

    /// Like [`DiscreteDist::new`] but rescales the weights to sum to one first.
    pub fn normalized(points: Vec<Vec<T>>, raw_weights: Vec<T>) -> Result<Self, OtError> {
        Self::check_shape(&points, &raw_weights)?;
        let total: T = raw_weights.iter().copied().sum();
        if !(total > T::zero()) || !total.is_finite() {
            return Err(OtError::InvalidDistribution(format!("weights must have a positive finite sum, got {total}")));
        }
        let weights = raw_weights.iter().map(|&w| w / total).collect();
        Self::new(points, weights)
    }

    pub fn uniform(points: Vec<Vec<T>>) -> Result<Self, OtError> {
        let k = points.len();
        Self::normalized(points, vec![T::one(); k])
    }

    pub fn dirac(point: Vec<T>) -> Self {
        Self { points: vec![point], weights: vec![T::one()] }
    }

    fn check_shape(points: &[Vec<T>], weights: &[T]) -> Result<(), OtError> {
        if points.is_empty() {
            return Err(OtError::InvalidDistribution("support is empty".into()));
        }
        if points.len() != weights.len() {
            return Err(OtError::InvalidDistribution(format!("{} points but {} weights", points.len(), weights.len())));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(OtError::InvalidDistribution("points have dimension 0".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(OtError::DimensionMismatch { expected: d, got: p.len() });
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OtError::InvalidDistribution("support points must be finite".into()));
        }
        Ok(())
    }

    fn sum_tolerance(k: usize) -> T {
        T::lit(1e-12).max(T::epsilon() * T::lit(64.0 * k as f64))
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[T], T)> + '_ {
        self.points.iter().map(Vec::as_slice).zip(self.weights.iter().copied())
    }

    /// Expectation of `f` under the distribution.
    pub fn expect(&self, mut f: impl FnMut(&[T]) -> T) -> T {
        self.iter().map(|(x, w)| w * f(x)).sum()
    }
}

/// Joint distribution on the product of the marginals' supports, stored as a
/// row-major tensor (last marginal fastest).
#[derive(Debug, Clone)]
pub struct Coupling<T> {
    marginals: Vec<DiscreteDist<T>>,
    shape: Vec<usize>,
    joint_weights: Vec<T>,
}

impl<T: Real> Coupling<T> {
    pub fn new(marginals: Vec<DiscreteDist<T>>, joint_weights: Vec<T>) -> Result<Self, OtError> {
        let shape: Vec<usize> = marginals.iter().map(DiscreteDist::len).collect();
        let size: usize = shape.iter().product();
        if joint_weights.len() != size {
            return Err(OtError::InvalidArgument(format!("coupling has {} weights for a product of size {size}", joint_weights.len())));
        }
        Ok(Self { marginals, shape, joint_weights })
    }

    pub fn marginals(&self) -> &[DiscreteDist<T>] {
        &self.marginals
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn joint_weights(&self) -> &[T] {
        &self.joint_weights
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.joint_weights[flat_index(&self.shape, index)]
    }

    /// Sum of the joint weights along every axis except `axis`.
    pub fn axis_sums(&self, axis: usize) -> Vec<T> {
        let mut sums = vec![T::zero(); self.shape[axis]];
        for (flat, &w) in self.joint_weights.iter().enumerate() {
            sums[axis_coordinate(&self.shape, flat, axis)] = sums[axis_coordinate(&self.shape, flat, axis)] + w;
        }
        sums
    }

    /// Largest per-atom gap between an axis sum and the marginal weight.
    pub fn marginal_residual(&self) -> T {
        let mut worst = T::zero();
        for (axis, marginal) in self.marginals.iter().enumerate() {
            for (s, &w) in self.axis_sums(axis).iter().zip(marginal.weights()) {
                worst = worst.max((*s - w).abs());
            }
        }
        worst
    }

    pub fn min_weight(&self) -> T {
        self.joint_weights.iter().fold(T::infinity(), |m, &w| m.min(w))
    }
}

pub(crate) fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    index.iter().zip(shape).fold(0, |acc, (&i, &s)| acc * s + i)
}

pub(crate) fn axis_coordinate(shape: &[usize], mut flat: usize, axis: usize) -> usize {
    for (a, &s) in shape.iter().enumerate().rev() {
        if a == axis {
            return flat % s;
        }
        flat /= s;
    }
    unreachable!("axis out of range")
}

/// Iterates over all multi-indices of `shape` in row-major order.
pub(crate) fn for_each_tuple(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.iter().any(|&s| s == 0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut axis = shape.len();
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(DiscreteDist::<f64>::new(vec![], vec![]).is_err());
        assert!(DiscreteDist::new(vec![vec![0.0], vec![1.0, 2.0]], vec![0.5, 0.5]).is_err());
        assert!(DiscreteDist::new(vec![vec![0.0], vec![1.0]], vec![0.6, 0.5]).is_err());
        assert!(DiscreteDist::new(vec![vec![0.0], vec![1.0]], vec![1.5, -0.5]).is_err());
        let d = DiscreteDist::normalized(vec![vec![0.0], vec![1.0]], vec![1.0, 3.0]).unwrap();
        assert_eq!(d.weights(), &[0.25, 0.75]);
    }

    #[test]
    fn tuple_iteration_is_row_major() {
        let mut seen = Vec::new();
        for_each_tuple(&[2, 3], |t| seen.push(flat_index(&[2, 3], t)));
        assert_eq!(seen, (0..6).collect::<Vec<_>>());
        assert_eq!(axis_coordinate(&[2, 3], 4, 0), 1);
        assert_eq!(axis_coordinate(&[2, 3], 4, 1), 1);
    }
}
