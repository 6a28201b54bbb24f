use super::cost::Cost;
use super::dist::DiscreteDist;
use super::OtError;
use crate::numkit::Real;

/// Which constraint ties the potentials together at every grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Feasibility {
    /// `sum_i phi_i(x) = 0`
    ZeroSum,
    /// `sum_i phi_i(x) <= 0`
    SumNonPositive,
}

/// Largest zero-sum violation accepted by [`dual_value`].
pub const DUAL_FEASIBILITY_TOL: f64 = 1e-8;

/// `n` potential functions tabulated on a shared grid.
///
/// For [`dual_value`] to lower-bound the n-ary cost the grid must contain
/// the minimiser of every support tuple (see
/// [`tuple_minimizer_support`](super::tuple_minimizer_support)); c-transforms
/// are taken over the grid only.
#[derive(Debug, Clone)]
pub struct DualPotentials<T> {
    pub grid: Vec<Vec<T>>,
    /// `phi_values[i][g]` is potential `i` at grid point `g`.
    pub phi_values: Vec<Vec<T>>,
    pub mode: Feasibility,
}

impl<T: Real> DualPotentials<T> {
    pub fn new(grid: Vec<Vec<T>>, phi_values: Vec<Vec<T>>, mode: Feasibility) -> Result<Self, OtError> {
        if grid.is_empty() {
            return Err(OtError::InvalidArgument("potential grid is empty".into()));
        }
        let d = grid[0].len();
        if let Some(g) = grid.iter().find(|g| g.len() != d) {
            return Err(OtError::DimensionMismatch { expected: d, got: g.len() });
        }
        if phi_values.is_empty() {
            return Err(OtError::InvalidArgument("no potentials supplied".into()));
        }
        if let Some(row) = phi_values.iter().find(|r| r.len() != grid.len()) {
            return Err(OtError::InvalidArgument(format!("potential tabulated on {} points, grid has {}", row.len(), grid.len())));
        }
        Ok(Self { grid, phi_values, mode })
    }

    /// Subtracts the across-potential mean at every grid point.
    pub fn zero_sum_projected(grid: Vec<Vec<T>>, mut phi_values: Vec<Vec<T>>) -> Result<Self, OtError> {
        let n = T::lit(phi_values.len() as f64);
        for g in 0..grid.len() {
            let mean = phi_values.iter().map(|r| r[g]).sum::<T>() / n;
            phi_values.iter_mut().for_each(|r| r[g] = r[g] - mean);
        }
        Self::new(grid, phi_values, Feasibility::ZeroSum)
    }

    pub fn len(&self) -> usize {
        self.phi_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi_values.is_empty()
    }

    /// Worst violation of the feasibility constraint over the grid.
    pub fn violation(&self) -> T {
        (0..self.grid.len())
            .map(|g| {
                let s: T = self.phi_values.iter().map(|r| r[g]).sum();
                match self.mode {
                    Feasibility::ZeroSum => s.abs(),
                    Feasibility::SumNonPositive => s.max(T::zero()),
                }
            })
            .fold(T::zero(), T::max)
    }
}

/// `phi^c~(query) = min_{x' in candidates} c~(query, x') + phi(x')`.
pub fn ctransform<T: Real>(phi: &[T], cost: Cost, candidates: &[Vec<T>], query: &[T]) -> Result<T, OtError> {
    if candidates.is_empty() {
        return Err(OtError::InvalidArgument("c-transform needs at least one candidate".into()));
    }
    if phi.len() != candidates.len() {
        return Err(OtError::InvalidArgument(format!("{} potential values for {} candidates", phi.len(), candidates.len())));
    }
    if let Some(c) = candidates.iter().find(|c| c.len() != query.len()) {
        return Err(OtError::DimensionMismatch { expected: query.len(), got: c.len() });
    }
    Ok(candidates.iter().zip(phi).map(|(c, &p)| cost.binary(query, c) + p).fold(T::infinity(), T::min))
}

/// Dual objective `sum_i E_{P_i}[phi_i^c~(X)]`.
pub fn dual_value<T: Real>(dists: &[DiscreteDist<T>], potentials: &DualPotentials<T>, cost: Cost) -> Result<T, OtError> {
    if dists.len() != potentials.len() {
        return Err(OtError::InvalidArgument(format!("{} marginals but {} potentials", dists.len(), potentials.len())));
    }
    let violation = potentials.violation();
    if violation > T::lit(DUAL_FEASIBILITY_TOL) {
        return Err(OtError::Constraint { violation: violation.as_f64() });
    }
    let mut total = T::zero();
    for (p, phi) in dists.iter().zip(&potentials.phi_values) {
        for (x, w) in p.iter() {
            total = total + w * ctransform(phi, cost, &potentials.grid, x)?;
        }
    }
    Ok(total)
}

/// Turns support potentials `u_i` (with `sum_i u_i(t_i) <= c(t)` on every
/// tuple, e.g. LP duals) into zero-sum grid potentials whose dual value is
/// at least `sum_i E_{P_i}[u_i]`.
///
/// `phi_i(z) = max_a u_i(a) − c~(x_{i,a}, z)` for all but the last marginal,
/// and the last one absorbs the remainder so the sum is exactly zero.
pub fn lift_support_potentials<T: Real>(
    dists: &[DiscreteDist<T>],
    support_potentials: &[Vec<T>],
    cost: Cost,
    grid: Vec<Vec<T>>,
) -> Result<DualPotentials<T>, OtError> {
    if dists.len() != support_potentials.len() || dists.len() < 2 {
        return Err(OtError::InvalidArgument("need one support potential per marginal (at least 2)".into()));
    }
    let n = dists.len();
    let mut phi_values = Vec::with_capacity(n);
    for (p, u) in dists.iter().zip(support_potentials).take(n - 1) {
        if u.len() != p.len() {
            return Err(OtError::InvalidArgument("support potential length differs from support size".into()));
        }
        let row: Vec<T> = grid
            .iter()
            .map(|z| p.points().iter().zip(u).map(|(x, &ua)| ua - cost.binary(x, z)).fold(T::neg_infinity(), T::max))
            .collect();
        phi_values.push(row);
    }
    let last: Vec<T> = (0..grid.len()).map(|g| -phi_values.iter().map(|r: &Vec<T>| r[g]).sum::<T>()).collect();
    phi_values.push(last);
    DualPotentials::new(grid, phi_values, Feasibility::ZeroSum)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_potential_w1_at_candidate() {
        let grid = vec![vec![0.0], vec![1.0], vec![2.5]];
        let v = ctransform(&[0.0; 3], Cost::W1, &grid, &[1.0]).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn quadratic_potential_w2_at_origin() {
        let grid: Vec<Vec<f64>> = (-10..=10).map(|i| vec![i as f64 * 0.1]).collect();
        let phi: Vec<f64> = grid.iter().map(|x| x[0] * x[0]).collect();
        assert_eq!(ctransform(&phi, Cost::W2, &grid, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn quadratic_ctransform_matches_closed_form() {
        // phi(x) = ½γx², c~ = ½(x−x')²: minimiser x' = x/(1+γ), value ½·γ/(1+γ)·x².
        let gamma = 0.5;
        let grid: Vec<Vec<f64>> = (-4000..=4000).map(|i| vec![i as f64 * 1e-3]).collect();
        let phi: Vec<f64> = grid.iter().map(|x| 0.5 * gamma * x[0] * x[0]).collect();
        for &x in &[-2.0, -0.7, 0.0, 0.3, 1.9] {
            let exact = 0.5 * gamma / (1.0 + gamma) * x * x;
            let v = ctransform(&phi, Cost::W2, &grid, &[x]).unwrap();
            assert!((v - exact).abs() <= 1e-4, "x={x}: {v} vs {exact}");
        }
    }

    #[test]
    fn infeasible_potentials_rejected() {
        let p = DiscreteDist::dirac(vec![0.0]);
        let pots = DualPotentials::new(vec![vec![0.0]], vec![vec![1.0], vec![-0.5]], Feasibility::ZeroSum).unwrap();
        assert!(matches!(dual_value(&[p.clone(), p], &pots, Cost::W2), Err(OtError::Constraint { .. })));
    }

    #[test]
    fn nonpositive_mode_accepts_slack() {
        let pots = DualPotentials::new(vec![vec![0.0]], vec![vec![-1.0], vec![-0.5]], Feasibility::SumNonPositive).unwrap();
        assert_eq!(pots.violation(), 0.0);
        let pots = DualPotentials::new(vec![vec![0.0]], vec![vec![1.0], vec![-0.5]], Feasibility::SumNonPositive).unwrap();
        assert_eq!(pots.violation(), 0.5);
    }
}
