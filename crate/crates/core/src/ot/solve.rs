use std::collections::HashSet;

use super::cost::{nary_cost, Cost};
use super::dist::{for_each_tuple, Coupling, DiscreteDist};
use super::lp::LinearProgram;
use super::transport::transportation_simplex;
use super::OtError;
use crate::numkit::Real;

/// Default cap on the number of joint atoms an n-ary LP may have.
pub const DEFAULT_JOINT_CAP: usize = 10_000;

/// Optimal value and coupling of a transport LP, plus the LP's dual
/// multipliers: one support potential per marginal atom, satisfying
/// `sum_i potentials[i][t_i] <= c(t)` on every tuple `t`.
#[derive(Debug, Clone)]
pub struct TransportSolution<T> {
    pub value: T,
    pub coupling: Coupling<T>,
    pub potentials: Vec<Vec<T>>,
}

#[derive(Debug, Clone)]
pub struct BarycenterSolution<T> {
    pub value: T,
    pub candidates: Vec<Vec<T>>,
    /// Optimal barycenter weights on `candidates`.
    pub weights: Vec<T>,
}

/// Exact `W_c~(P, Q)` over couplings of two distributions, by the
/// transportation simplex.
pub fn binary_ot_exact<T: Real>(p: &DiscreteDist<T>, q: &DiscreteDist<T>, cost: Cost) -> Result<TransportSolution<T>, OtError> {
    if p.dim() != q.dim() {
        return Err(OtError::DimensionMismatch { expected: p.dim(), got: q.dim() });
    }
    let costs: Vec<T> = p.points().iter().flat_map(|x| q.points().iter().map(move |y| cost.binary(x, y))).collect();
    let r = transportation_simplex(p.weights(), q.weights(), &costs)?;
    let coupling = Coupling::new(vec![p.clone(), q.clone()], r.plan)?;
    Ok(TransportSolution { value: r.value, coupling, potentials: vec![r.row_potentials, r.col_potentials] })
}

/// Exact n-ary transport cost with the infimal-convolution cost, using the
/// default joint-size cap.
pub fn nary_ot_exact<T: Real>(dists: &[DiscreteDist<T>], cost: Cost) -> Result<TransportSolution<T>, OtError> {
    nary_ot_exact_with_cap(dists, cost, DEFAULT_JOINT_CAP)
}

pub fn nary_ot_exact_with_cap<T: Real>(dists: &[DiscreteDist<T>], cost: Cost, cap: usize) -> Result<TransportSolution<T>, OtError> {
    check_marginals(dists)?;
    let shape: Vec<usize> = dists.iter().map(DiscreteDist::len).collect();
    let size = shape.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s)).unwrap_or(usize::MAX);
    if size > cap {
        return Err(OtError::TooLarge { size, cap });
    }
    let mut costs = Vec::with_capacity(size);
    let mut failure = None;
    for_each_tuple(&shape, |t| {
        if failure.is_some() {
            return;
        }
        let pts: Vec<&[T]> = t.iter().enumerate().map(|(i, &a)| dists[i].points()[a].as_slice()).collect();
        match nary_cost(&pts, cost) {
            Ok((v, _)) => costs.push(v),
            Err(e) => failure = Some(e),
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    solve_coupling(dists.to_vec(), costs)
}

/// `min_Q sum_i W_c~(Q, P_i)` with `Q` ranging over distributions supported
/// on `candidates`, solved as a single LP in which `Q`'s weights are free.
pub fn barycenter_value<T: Real>(dists: &[DiscreteDist<T>], cost: Cost, candidates: &[Vec<T>]) -> Result<BarycenterSolution<T>, OtError> {
    if candidates.is_empty() {
        return Err(OtError::InvalidArgument("barycenter candidate support is empty".into()));
    }
    check_marginals(dists)?;
    let d = dists[0].dim();
    if let Some(c) = candidates.iter().find(|c| c.len() != d) {
        return Err(OtError::DimensionMismatch { expected: d, got: c.len() });
    }
    let nc = candidates.len();
    // Variable layout: plan_i(q, a) blocks, one per marginal, then Q weights.
    let offsets: Vec<usize> = dists
        .iter()
        .scan(0usize, |acc, p| {
            let here = *acc;
            *acc += nc * p.len();
            Some(here)
        })
        .collect();
    let q_offset = offsets.last().map_or(0, |&o| o + nc * dists.last().map_or(0, DiscreteDist::len));
    let mut lp = LinearProgram::new(q_offset + nc);
    for (i, p) in dists.iter().enumerate() {
        let k = p.len();
        for (q, z) in candidates.iter().enumerate() {
            for (a, x) in p.points().iter().enumerate() {
                lp.costs[offsets[i] + q * k + a] = cost.binary(z, x);
            }
        }
        for a in 0..k {
            lp.add_row((0..nc).map(|q| (offsets[i] + q * k + a, T::one())).collect(), p.weights()[a]);
        }
        for q in 0..nc {
            let mut row: Vec<(usize, T)> = (0..k).map(|a| (offsets[i] + q * k + a, T::one())).collect();
            row.push((q_offset + q, -T::one()));
            lp.add_row(row, T::zero());
        }
    }
    let sol = lp.solve()?;
    Ok(BarycenterSolution { value: sol.value, candidates: candidates.to_vec(), weights: sol.x[q_offset..].to_vec() })
}

/// Distinct minimisers `argmin_z sum_i c~(z, x_i)` over every tuple of
/// support points, in tuple order. For W2 these are the tuple means, which
/// contain the support of an optimal barycenter.
pub fn tuple_minimizer_support<T: Real>(dists: &[DiscreteDist<T>], cost: Cost) -> Result<Vec<Vec<T>>, OtError> {
    check_marginals(dists)?;
    let shape: Vec<usize> = dists.iter().map(DiscreteDist::len).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut failure = None;
    for_each_tuple(&shape, |t| {
        if failure.is_some() {
            return;
        }
        let pts: Vec<&[T]> = t.iter().enumerate().map(|(i, &a)| dists[i].points()[a].as_slice()).collect();
        match nary_cost(&pts, cost) {
            Ok((_, z)) => {
                let key: Vec<u64> = z.iter().map(|v| v.as_f64().to_bits()).collect();
                if seen.insert(key) {
                    out.push(z);
                }
            }
            Err(e) => failure = Some(e),
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

fn check_marginals<T: Real>(dists: &[DiscreteDist<T>]) -> Result<(), OtError> {
    if dists.len() < 2 {
        return Err(OtError::InvalidArgument(format!("need at least 2 marginals, got {}", dists.len())));
    }
    let d = dists[0].dim();
    if let Some(p) = dists.iter().find(|p| p.dim() != d) {
        return Err(OtError::DimensionMismatch { expected: d, got: p.dim() });
    }
    Ok(())
}

/// Coupling LP over the joint tensor: one variable per tuple, one equality
/// row per marginal atom.
fn solve_coupling<T: Real>(marginals: Vec<DiscreteDist<T>>, costs: Vec<T>) -> Result<TransportSolution<T>, OtError> {
    let shape: Vec<usize> = marginals.iter().map(DiscreteDist::len).collect();
    let mut rows: Vec<Vec<Vec<(usize, T)>>> = shape.iter().map(|&k| vec![Vec::new(); k]).collect();
    let mut flat = 0usize;
    for_each_tuple(&shape, |t| {
        for (i, &a) in t.iter().enumerate() {
            rows[i][a].push((flat, T::one()));
        }
        flat += 1;
    });
    let mut lp = LinearProgram::new(costs.len());
    lp.costs = costs;
    for (i, per_atom) in rows.into_iter().enumerate() {
        for (a, row) in per_atom.into_iter().enumerate() {
            lp.add_row(row, marginals[i].weights()[a]);
        }
    }
    let sol = lp.solve()?;
    let mut duals = sol.duals.into_iter();
    let potentials = shape.iter().map(|&k| duals.by_ref().take(k).collect()).collect();
    let coupling = Coupling::new(marginals, sol.x)?;
    Ok(TransportSolution { value: sol.value, coupling, potentials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d1(points: &[f64], weights: &[f64]) -> DiscreteDist<f64> {
        DiscreteDist::new(points.iter().map(|&p| vec![p]).collect(), weights.to_vec()).unwrap()
    }

    #[test]
    fn single_atom_transport() {
        let s = binary_ot_exact(&DiscreteDist::dirac(vec![0.0f64]), &DiscreteDist::dirac(vec![1.0]), Cost::W1).unwrap();
        assert!((s.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_give_diagonal_coupling() {
        let p = d1(&[0.0, 1.0, 3.0], &[0.2, 0.3, 0.5]);
        let s = binary_ot_exact(&p, &p, Cost::W2).unwrap();
        assert!(s.value.abs() < 1e-15);
        for a in 0..3 {
            for b in 0..3 {
                let w = s.coupling.get(&[a, b]);
                if a == b {
                    assert!((w - p.weights()[a]).abs() < 1e-12);
                } else {
                    assert!(w.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_by_two_birkhoff_vertices() {
        // Vertex couplings: identity matching costs (0 + ½·1)/2 = 0.25,
        // the swap costs (½·4 + ½·1)/2 = 1.25.
        let p = d1(&[0.0, 1.0], &[0.5, 0.5]);
        let q = d1(&[0.0, 2.0], &[0.5, 0.5]);
        let s = binary_ot_exact(&p, &q, Cost::W2).unwrap();
        assert!((s.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn joint_cap_is_enforced() {
        let p = DiscreteDist::uniform((0..30).map(|i| vec![i as f64]).collect()).unwrap();
        let err = nary_ot_exact_with_cap(&[p.clone(), p.clone(), p], Cost::W2, 10_000).unwrap_err();
        assert!(matches!(err, OtError::TooLarge { size: 27_000, cap: 10_000 }));
    }

    #[test]
    fn empty_candidates_rejected() {
        let p = d1(&[0.0], &[1.0]);
        assert!(barycenter_value(&[p.clone(), p], Cost::W2, &[]).is_err());
    }

    #[test]
    fn diracs_meet_in_the_middle() {
        let p = DiscreteDist::dirac(vec![0.0f64]);
        let q = DiscreteDist::dirac(vec![2.0]);
        let cands = tuple_minimizer_support(&[p.clone(), q.clone()], Cost::W2).unwrap();
        assert_eq!(cands, vec![vec![1.0]]);
        let b = barycenter_value(&[p.clone(), q.clone()], Cost::W2, &cands).unwrap();
        assert!((b.value - 1.0).abs() < 1e-15);
        let n = nary_ot_exact(&[p, q], Cost::W2).unwrap();
        assert!((n.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn f32_instance_solves() {
        let p = DiscreteDist::<f32>::uniform(vec![vec![0.0], vec![1.0]]).unwrap();
        let q = DiscreteDist::<f32>::uniform(vec![vec![0.5], vec![2.0]]).unwrap();
        let s = binary_ot_exact(&p, &q, Cost::W1).unwrap();
        assert!((s.value - 0.75).abs() < 1e-5);
    }
}
