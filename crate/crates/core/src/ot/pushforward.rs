//! One-dimensional W2 machinery built on quantile functions.
//!
//! In 1-D the monotone (sorted-quantile) coupling is optimal for every convex
//! cost, and the W2 barycenter's quantile function is the average of the
//! marginals' quantile functions.

use std::cmp::Ordering;

use super::dist::DiscreteDist;
use super::OtError;
use crate::numkit::Real;

/// Piece of the common quantile coupling: on a `u`-interval of length
/// `mass`, marginal `i` sits at its sorted atom `atoms[i]`.
#[derive(Debug, Clone)]
pub struct QuantileSegment<T> {
    pub atoms: Vec<usize>,
    pub mass: T,
}

/// Monotone multi-marginal coupling of 1-D distributions. Atom indices in
/// the segments refer to the original (unsorted) supports.
pub fn quantile_coupling<T: Real>(dists: &[DiscreteDist<T>]) -> Result<Vec<QuantileSegment<T>>, OtError> {
    if dists.is_empty() {
        return Err(OtError::InvalidArgument("no distributions given".into()));
    }
    if let Some(p) = dists.iter().find(|p| p.dim() != 1) {
        return Err(OtError::Unsupported(format!("quantile coupling needs 1-D inputs, got dimension {}", p.dim())));
    }
    let orders: Vec<Vec<usize>> = dists
        .iter()
        .map(|p| {
            let mut idx: Vec<usize> = (0..p.len()).collect();
            idx.sort_by(|&a, &b| p.points()[a][0].partial_cmp(&p.points()[b][0]).unwrap_or(Ordering::Equal));
            idx
        })
        .collect();
    let n = dists.len();
    let mut pos = vec![0usize; n];
    let mut left: Vec<T> = (0..n).map(|i| dists[i].weights()[orders[i][0]]).collect();
    let tiny = T::epsilon() * T::lit(16.0);
    let mut segments = Vec::new();
    loop {
        let mass = left.iter().copied().fold(T::infinity(), T::min);
        if mass > T::zero() {
            segments.push(QuantileSegment { atoms: (0..n).map(|i| orders[i][pos[i]]).collect(), mass });
        }
        let mut exhausted = false;
        for i in 0..n {
            left[i] = left[i] - mass;
            if left[i] <= tiny {
                pos[i] += 1;
                if pos[i] == dists[i].len() {
                    exhausted = true;
                } else {
                    left[i] = left[i] + dists[i].weights()[orders[i][pos[i]]];
                }
            }
        }
        if exhausted {
            return Ok(segments);
        }
    }
}

/// W2 barycenter (equal weights) of 1-D distributions by quantile averaging.
pub fn quantile_barycenter<T: Real>(dists: &[DiscreteDist<T>]) -> Result<DiscreteDist<T>, OtError> {
    let segments = quantile_coupling(dists)?;
    let inv = T::one() / T::lit(dists.len() as f64);
    let points = segments
        .iter()
        .map(|s| vec![s.atoms.iter().enumerate().map(|(i, &a)| dists[i].points()[a][0]).sum::<T>() * inv])
        .collect();
    DiscreteDist::normalized(points, segments.iter().map(|s| s.mass).collect())
}

/// Pushes each marginal to the W2 barycenter through the barycentric
/// projection of its quantile coupling and returns the largest W1 distance
/// between two of the resulting distributions.
///
/// In the continuous limit every pushforward equals the barycenter, so the
/// result measures how far a discretisation is from that regime.
pub fn pushforward_check<T: Real>(dists: &[DiscreteDist<T>]) -> Result<T, OtError> {
    if dists.len() < 2 {
        return Err(OtError::InvalidArgument(format!("need at least 2 distributions, got {}", dists.len())));
    }
    let segments = quantile_coupling(dists)?;
    let inv = T::one() / T::lit(dists.len() as f64);
    let mut pushed = Vec::with_capacity(dists.len());
    for (i, p) in dists.iter().enumerate() {
        let mut num = vec![T::zero(); p.len()];
        let mut den = vec![T::zero(); p.len()];
        for s in &segments {
            let z = s.atoms.iter().enumerate().map(|(j, &a)| dists[j].points()[a][0]).sum::<T>() * inv;
            num[s.atoms[i]] = num[s.atoms[i]] + s.mass * z;
            den[s.atoms[i]] = den[s.atoms[i]] + s.mass;
        }
        let points = (0..p.len())
            .map(|a| if den[a] > T::zero() { vec![num[a] / den[a]] } else { p.points()[a].clone() })
            .collect();
        pushed.push(DiscreteDist::new(points, p.weights().to_vec())?);
    }
    let mut worst = T::zero();
    for i in 0..pushed.len() {
        for j in i + 1..pushed.len() {
            worst = worst.max(w1_distance_1d(&pushed[i], &pushed[j])?);
        }
    }
    Ok(worst)
}

/// `W1(P, Q) = ∫ |F_P(t) − F_Q(t)| dt` for 1-D distributions.
pub fn w1_distance_1d<T: Real>(p: &DiscreteDist<T>, q: &DiscreteDist<T>) -> Result<T, OtError> {
    for d in [p, q] {
        if d.dim() != 1 {
            return Err(OtError::Unsupported(format!("1-D W1 needs 1-D inputs, got dimension {}", d.dim())));
        }
    }
    let mut events: Vec<(T, T)> = p.iter().map(|(x, w)| (x[0], w)).chain(q.iter().map(|(x, w)| (x[0], -w))).collect();
    events.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let mut cdf_gap = T::zero();
    let mut total = T::zero();
    for pair in events.windows(2) {
        cdf_gap = cdf_gap + pair[0].1;
        total = total + cdf_gap.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(points: &[f64], weights: &[f64]) -> DiscreteDist<f64> {
        DiscreteDist::new(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn identical_inputs() {
        let p = d1(&[0.3, -1.0, 2.0], &[0.2, 0.5, 0.3]);
        assert_eq!(pushforward_check(&[p.clone(), p]).unwrap(), 0.0);
    }

    #[test]
    fn diracs_push_to_midpoint() {
        let p = DiscreteDist::dirac(vec![0.0]);
        let q = DiscreteDist::dirac(vec![2.0]);
        assert_eq!(pushforward_check(&[p.clone(), q.clone()]).unwrap(), 0.0);
        let b = quantile_barycenter(&[p, q]).unwrap();
        assert_eq!(b.points(), &[vec![1.0]]);
    }

    #[test]
    fn w1_of_shifted_atoms() {
        let p = d1(&[0.0, 1.0], &[0.5, 0.5]);
        let q = d1(&[0.5, 3.0], &[0.5, 0.5]);
        // Monotone matching: 0→0.5, 1→3; cost (0.5 + 2)/2.
        assert!((w1_distance_1d(&p, &q).unwrap() - 1.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_two_dimensional_input() {
        let p = DiscreteDist::dirac(vec![0.0, 1.0]);
        assert!(matches!(pushforward_check(&[p.clone(), p]), Err(OtError::Unsupported(_))));
    }

    #[test]
    fn barycenter_splits_unequal_masses() {
        let p = d1(&[0.0, 1.0], &[0.25, 0.75]);
        let q = d1(&[0.0, 1.0], &[0.75, 0.25]);
        let b = quantile_barycenter(&[p, q]).unwrap();
        assert_eq!(b.points(), &[vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(b.weights(), &[0.25, 0.5, 0.25]);
    }
}
