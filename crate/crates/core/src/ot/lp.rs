//! Two-phase primal simplex for `min c^T x  s.t.  A x = b, x >= 0`.
//!
//! Dense tableau with Bland's smallest-index rule for both the entering
//! column and ratio-test ties, so the pivot sequence is deterministic and
//! cannot cycle. The artificial columns are kept through phase 2 and hold
//! `B^-1`, which gives the optimal dual multipliers for free.

use crate::numkit::Real;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LpError {
    #[error("linear program is infeasible (phase-1 residual {residual})")]
    Infeasible { residual: f64 },
    #[error("linear program is unbounded (column {column})")]
    Unbounded { column: usize },
    #[error("simplex exceeded {limit} pivots")]
    PivotLimit { limit: usize },
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

/// Equality-form linear program with sparse constraint rows.
#[derive(Debug, Clone)]
pub struct LinearProgram<T> {
    pub costs: Vec<T>,
    /// Each row is a list of `(variable, coefficient)`.
    pub rows: Vec<Vec<(usize, T)>>,
    pub rhs: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct LpSolution<T> {
    pub value: T,
    pub x: Vec<T>,
    /// One multiplier per constraint row; `c_j - y^T A_j >= 0` at optimum.
    pub duals: Vec<T>,
    pub pivots: usize,
}

impl<T: Real> LinearProgram<T> {
    pub fn new(num_vars: usize) -> Self {
        Self { costs: vec![T::zero(); num_vars], rows: Vec::new(), rhs: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.costs.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, T)>, rhs: T) {
        self.rows.push(coeffs);
        self.rhs.push(rhs);
    }

    pub fn solve(&self) -> Result<LpSolution<T>, LpError> {
        Tableau::build(self)?.run(self)
    }
}

struct Tableau<T> {
    m: usize,
    n: usize,
    width: usize,
    cells: Vec<T>,
    obj: Vec<T>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    sign: Vec<T>,
    eps: T,
    pivots: usize,
    limit: usize,
}

impl<T: Real> Tableau<T> {
    fn build(lp: &LinearProgram<T>) -> Result<Self, LpError> {
        let m = lp.rows.len();
        let n = lp.costs.len();
        if lp.rhs.len() != m {
            return Err(LpError::Malformed("rhs length differs from row count".into()));
        }
        let width = n + m + 1;
        let mut cells = vec![T::zero(); m * width];
        let mut sign = vec![T::one(); m];
        for (i, row) in lp.rows.iter().enumerate() {
            if lp.rhs[i] < T::zero() {
                sign[i] = -T::one();
            }
            for &(j, a) in row {
                if j >= n {
                    return Err(LpError::Malformed(format!("row {i} references variable {j} of {n}")));
                }
                cells[i * width + j] = cells[i * width + j] + sign[i] * a;
            }
            cells[i * width + n + i] = T::one();
            cells[i * width + width - 1] = sign[i] * lp.rhs[i];
        }
        let scale = lp.rows.iter().flatten().fold(T::one(), |s, &(_, a)| s.max(a.abs()));
        Ok(Self {
            m,
            n,
            width,
            cells,
            obj: vec![T::zero(); width],
            basis: (n..n + m).collect(),
            is_basic: (0..n + m).map(|j| j >= n).collect(),
            sign,
            eps: T::pivot_tol() * scale,
            pivots: 0,
            limit: 200 * (n + m) + 10_000,
        })
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.cells[i * self.width + j]
    }

    fn rhs(&self, i: usize) -> T {
        self.at(i, self.width - 1)
    }

    fn run(mut self, lp: &LinearProgram<T>) -> Result<LpSolution<T>, LpError> {
        // Phase 1: minimise the sum of artificials.
        for j in 0..self.width {
            if j >= self.n && j < self.n + self.m {
                continue;
            }
            self.obj[j] = -(0..self.m).map(|i| self.at(i, j)).sum::<T>();
        }
        self.optimize(self.n + self.m)?;
        let residual = -self.obj[self.width - 1];
        let rhs_scale = (0..self.m).fold(T::one(), |s, i| s.max(self.rhs(i).abs()));
        if residual > T::epsilon().sqrt() * rhs_scale * T::lit(self.m.max(1) as f64) {
            return Err(LpError::Infeasible { residual: residual.as_f64() });
        }
        self.drive_out_artificials();

        // Phase 2 on the structural columns only.
        let cost_of = |j: usize| if j < self.n { lp.costs[j] } else { T::zero() };
        for j in 0..self.width {
            let cb: T = (0..self.m).map(|i| cost_of(self.basis[i]) * self.at(i, j)).sum();
            self.obj[j] = if j == self.width - 1 { -cb } else { cost_of(j) - cb };
        }
        self.optimize(self.n)?;

        let mut x = vec![T::zero(); self.n];
        for i in 0..self.m {
            if self.basis[i] < self.n {
                x[self.basis[i]] = self.rhs(i).max(T::zero());
            }
        }
        let value = x.iter().zip(&lp.costs).map(|(&xi, &c)| xi * c).sum();
        let duals = (0..self.m).map(|k| -self.obj[self.n + k] * self.sign[k]).collect();
        Ok(LpSolution { value, x, duals, pivots: self.pivots })
    }

    /// Bland's rule simplex over columns `0..allowed`.
    fn optimize(&mut self, allowed: usize) -> Result<(), LpError> {
        loop {
            let Some(col) = (0..allowed).find(|&j| self.obj[j] < -self.eps && !self.is_basic[j]) else {
                return Ok(());
            };
            let mut best: Option<(usize, T)> = None;
            for i in 0..self.m {
                let a = self.at(i, col);
                if a > self.eps {
                    let ratio = self.rhs(i).max(T::zero()) / a;
                    best = match best {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br || (ratio == br && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = best else {
                return Err(LpError::Unbounded { column: col });
            };
            self.pivot(row, col);
            if self.pivots > self.limit {
                return Err(LpError::PivotLimit { limit: self.limit });
            }
        }
    }

    fn pivot(&mut self, row: usize, col: usize) {
        self.pivots += 1;
        let w = self.width;
        let p = self.at(row, col);
        for j in 0..w {
            self.cells[row * w + j] = self.cells[row * w + j] / p;
        }
        self.cells[row * w + col] = T::one();
        let pivot_row: Vec<T> = self.cells[row * w..(row + 1) * w].to_vec();
        let nz: Vec<usize> = (0..w).filter(|&j| pivot_row[j] != T::zero()).collect();
        for i in 0..self.m {
            if i == row {
                continue;
            }
            let f = self.cells[i * w + col];
            if f == T::zero() {
                continue;
            }
            let r = &mut self.cells[i * w..(i + 1) * w];
            for &j in &nz {
                r[j] = r[j] - f * pivot_row[j];
            }
            r[col] = T::zero();
        }
        let f = self.obj[col];
        if f != T::zero() {
            for &j in &nz {
                self.obj[j] = self.obj[j] - f * pivot_row[j];
            }
            self.obj[col] = T::zero();
        }
        self.is_basic[self.basis[row]] = false;
        self.is_basic[col] = true;
        self.basis[row] = col;
    }

    /// Pivots zero-level artificials out of the basis where a structural
    /// column allows it. Rows where none does are redundant and stay inert.
    fn drive_out_artificials(&mut self) {
        for i in 0..self.m {
            if self.basis[i] < self.n {
                continue;
            }
            if let Some(j) = (0..self.n).find(|&j| self.at(i, j).abs() > self.eps && !self.is_basic[j]) {
                self.pivot(i, j);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_transport_problem() {
        // 2x2 transport with costs [[0,1],[1,0]] and uniform marginals.
        let mut lp = LinearProgram::<f64>::new(4);
        lp.costs = vec![0.0, 1.0, 1.0, 0.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], 0.5);
        lp.add_row(vec![(2, 1.0), (3, 1.0)], 0.5);
        lp.add_row(vec![(0, 1.0), (2, 1.0)], 0.5);
        lp.add_row(vec![(1, 1.0), (3, 1.0)], 0.5);
        let sol = lp.solve().unwrap();
        assert!(sol.value.abs() < 1e-12);
        assert!((sol.x[0] - 0.5).abs() < 1e-12 && (sol.x[3] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn duals_certify_optimality() {
        // min x0 + 2 x1 + 3 x2, x0 + x1 + x2 = 1, x1 - x2 = -0.2
        let mut lp = LinearProgram::<f64>::new(3);
        lp.costs = vec![1.0, 2.0, 3.0];
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], 1.0);
        lp.add_row(vec![(1, 1.0), (2, -1.0)], -0.2);
        let sol = lp.solve().unwrap();
        let dual_obj: f64 = sol.duals.iter().zip(&lp.rhs).map(|(y, b)| y * b).sum();
        assert!((dual_obj - sol.value).abs() < 1e-12);
        for j in 0..3 {
            let col: f64 = lp.rows.iter().zip(&sol.duals).map(|(r, y)| r.iter().filter(|(v, _)| *v == j).map(|(_, a)| a * y).sum::<f64>()).sum();
            assert!(lp.costs[j] - col >= -1e-12);
        }
    }

    #[test]
    fn infeasible_detected() {
        let mut lp = LinearProgram::<f64>::new(1);
        lp.costs = vec![1.0];
        lp.add_row(vec![(0, 1.0)], -1.0);
        assert!(matches!(lp.solve(), Err(LpError::Infeasible { .. })));
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LinearProgram::<f64>::new(2);
        lp.costs = vec![-1.0, 0.0];
        lp.add_row(vec![(0, 1.0), (1, -1.0)], 0.0);
        assert!(matches!(lp.solve(), Err(LpError::Unbounded { .. })));
    }
}
