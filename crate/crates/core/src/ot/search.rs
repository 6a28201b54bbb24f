use super::cost::{nary_cost, Cost};
use super::dist::{for_each_tuple, DiscreteDist};
use super::dual::{dual_value, lift_support_potentials, DualPotentials};
use super::solve::tuple_minimizer_support;
use super::OtError;
use crate::numkit::Real;

/// Largest number of lattice points [`quantized_dual_search`] will visit.
pub const DUAL_SEARCH_CAP: usize = 5_000_000;

/// Best dual found by [`quantized_dual_search`].
#[derive(Debug, Clone)]
pub struct DualSearchResult<T> {
    pub value: T,
    pub potentials: DualPotentials<T>,
    /// Lattice points visited.
    pub evaluated: usize,
    /// Largest feasibility violation over every visited candidate.
    pub worst_violation: T,
}

/// Exhaustive search over quantized dual potentials.
///
/// Support potentials `u_i` of the first `n − 1` marginals range over the
/// lattice `step·Z` inside `[−C, C]`, where `C` is the largest tuple cost,
/// with `u_i` pinned to 0 on the first atom (the dual is invariant under
/// such shifts). Each lattice point is lifted to zero-sum potentials on the
/// tuple-minimiser grid, so every candidate is feasible and its dual value
/// is a lower bound on the primal. Some optimal dual is c-concave and lies
/// in the box, so the best lattice point is within `(n − 1)·step` of the
/// optimum.
pub fn quantized_dual_search<T: Real>(dists: &[DiscreteDist<T>], cost: Cost, step: T) -> Result<DualSearchResult<T>, OtError> {
    if !(step > T::zero()) {
        return Err(OtError::InvalidArgument("quantization step must be positive".into()));
    }
    let grid = tuple_minimizer_support(dists, cost)?;
    let shape: Vec<usize> = dists.iter().map(DiscreteDist::len).collect();
    let mut c_max = T::zero();
    let mut failure = None;
    for_each_tuple(&shape, |t| {
        let pts: Vec<&[T]> = t.iter().enumerate().map(|(i, &a)| dists[i].points()[a].as_slice()).collect();
        match nary_cost(&pts, cost) {
            Ok((c, _)) => c_max = c_max.max(c),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let half = (c_max / step).floor().as_f64() as usize;
    let levels = 2 * half + 1;
    let free: usize = shape[..shape.len() - 1].iter().map(|k| k - 1).sum();
    let total = (0..free).try_fold(1usize, |acc, _| acc.checked_mul(levels)).filter(|&t| t <= DUAL_SEARCH_CAP);
    let Some(total) = total else {
        return Err(OtError::TooLarge { size: levels.saturating_pow(free as u32), cap: DUAL_SEARCH_CAP });
    };
    let level = |l: usize| T::lit(l as f64 - half as f64) * step;
    let mut counter = vec![0usize; free];
    let mut best: Option<(T, DualPotentials<T>)> = None;
    let mut worst_violation = T::zero();
    for _ in 0..total {
        let mut pos = counter.iter();
        let u: Vec<Vec<T>> = shape
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                if i + 1 == shape.len() {
                    vec![T::zero(); k]
                } else {
                    std::iter::once(T::zero()).chain((1..k).map(|_| level(*pos.next().expect("one counter per free value")))).collect()
                }
            })
            .collect();
        let pots = lift_support_potentials(dists, &u, cost, grid.clone())?;
        worst_violation = worst_violation.max(pots.violation());
        let value = dual_value(dists, &pots, cost)?;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, pots));
        }
        for c in counter.iter_mut() {
            *c += 1;
            if *c < levels {
                break;
            }
            *c = 0;
        }
    }
    let (value, potentials) = best.expect("the lattice has at least one point");
    Ok(DualSearchResult { value, potentials, evaluated: total, worst_violation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::nary_ot_exact;

    #[test]
    fn two_point_instance_closes_the_gap() {
        let p = DiscreteDist::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let q = DiscreteDist::uniform(vec![vec![0.0], vec![2.0]]).unwrap();
        let primal = nary_ot_exact(&[p.clone(), q.clone()], Cost::W2).unwrap().value;
        let found = quantized_dual_search(&[p, q], Cost::W2, 1e-3).unwrap();
        assert!(found.value <= primal + 1e-12);
        assert!(primal - found.value <= 1e-3);
        assert_eq!(found.worst_violation, 0.0);
    }

    #[test]
    fn single_atoms_need_one_point() {
        let p: DiscreteDist<f64> = DiscreteDist::dirac(vec![0.0]);
        let q = DiscreteDist::dirac(vec![2.0]);
        let found = quantized_dual_search(&[p, q], Cost::W2, 0.1).unwrap();
        assert_eq!(found.evaluated, 1);
        assert!((found.value - 1.0).abs() <= 1e-12);
    }
}
