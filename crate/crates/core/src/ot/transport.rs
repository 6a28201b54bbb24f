//! Transportation simplex for two-marginal problems.
//!
//! The basis is a spanning tree on `rows + cols` nodes with `rows + cols − 1`
//! basic cells. The entering cell is the most negative reduced cost; after a
//! run of degenerate pivots the solver switches to Bland's rule (first
//! improving cell, smallest leaving index) until progress resumes, which
//! rules out cycling.

use std::collections::VecDeque;

use super::lp::LpError;
use crate::numkit::Real;

/// Consecutive zero-step pivots tolerated before switching to Bland's rule.
const DEGENERATE_RUN_LIMIT: usize = 50;

pub(crate) struct TransportResult<T> {
    pub value: T,
    /// Row-major `rows x cols` plan.
    pub plan: Vec<T>,
    pub row_potentials: Vec<T>,
    pub col_potentials: Vec<T>,
}

pub(crate) fn transportation_simplex<T: Real>(supply: &[T], demand: &[T], costs: &[T]) -> Result<TransportResult<T>, LpError> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 || costs.len() != m * n {
        return Err(LpError::Malformed(format!("transport problem {m}x{n} with {} costs", costs.len())));
    }
    let mut flow = vec![T::zero(); m * n];
    let mut basic = vec![false; m * n];
    let mut basis: Vec<usize> = Vec::with_capacity(m + n - 1);

    // North-west corner start; a simultaneous row/column exhaustion keeps a
    // zero-flow cell in the basis so it stays a spanning tree.
    let mut s = supply.to_vec();
    let mut d = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let x = s[i].min(d[j]).max(T::zero());
        let cell = i * n + j;
        flow[cell] = x;
        basic[cell] = true;
        basis.push(cell);
        s[i] = s[i] - x;
        d[j] = d[j] - x;
        if i == m - 1 && j == n - 1 {
            break;
        }
        if (j == n - 1 || s[i] <= d[j]) && i < m - 1 {
            i += 1;
        } else {
            j += 1;
        }
    }

    let scale = costs.iter().fold(T::one(), |a, c| a.max(c.abs()));
    let tol = T::epsilon().sqrt() * T::lit(1e-3) * scale;
    let limit = 50 * (m * n + m + n) + 10_000;
    let mut u = vec![T::zero(); m];
    let mut v = vec![T::zero(); n];
    let mut degenerate_run = 0usize;
    for _ in 0..limit {
        let adjacency = tree_adjacency(&basis, m, n);
        node_potentials(&adjacency, costs, m, n, &mut u, &mut v);
        let reduced = |c: usize| costs[c] - u[c / n] - v[c % n];
        let entering = if degenerate_run >= DEGENERATE_RUN_LIMIT {
            (0..m * n).find(|&c| !basic[c] && reduced(c) < -tol)
        } else {
            (0..m * n)
                .filter(|&c| !basic[c])
                .map(|c| (c, reduced(c)))
                .filter(|&(_, r)| r < -tol)
                .fold(None, |best: Option<(usize, T)>, (c, r)| match best {
                    Some((_, b)) if b <= r => best,
                    _ => Some((c, r)),
                })
                .map(|(c, _)| c)
        };
        let Some(entering) = entering else {
            let value = flow.iter().zip(costs).map(|(&f, &c)| f * c).sum();
            return Ok(TransportResult { value, plan: flow, row_potentials: u, col_potentials: v });
        };
        let path = tree_path(&adjacency, m + entering % n, entering / n, m, n);
        // path runs from the entering column to the entering row; its cells
        // alternate losing and gaining flow, starting with a loss.
        let mut theta = T::infinity();
        let mut leaving = usize::MAX;
        for &c in path.iter().step_by(2) {
            if flow[c] < theta || (flow[c] == theta && c < leaving) {
                theta = flow[c];
                leaving = c;
            }
        }
        degenerate_run = if theta > T::zero() { 0 } else { degenerate_run + 1 };
        for (k, &c) in path.iter().enumerate() {
            flow[c] = if k % 2 == 0 { flow[c] - theta } else { flow[c] + theta };
        }
        flow[entering] = theta;
        flow[leaving] = T::zero();
        basic[leaving] = false;
        basic[entering] = true;
        let slot = basis.iter().position(|&c| c == leaving).expect("leaving cell is basic");
        basis[slot] = entering;
    }
    Err(LpError::PivotLimit { limit })
}

/// Nodes `0..m` are rows, `m..m+n` columns; each entry is `(neighbour, cell)`.
fn tree_adjacency(basis: &[usize], m: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut adj = vec![Vec::new(); m + n];
    for &c in basis {
        let (r, col) = (c / n, m + c % n);
        adj[r].push((col, c));
        adj[col].push((r, c));
    }
    adj
}

fn node_potentials<T: Real>(adj: &[Vec<(usize, usize)>], costs: &[T], m: usize, n: usize, u: &mut [T], v: &mut [T]) {
    let mut seen = vec![false; m + n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    u[0] = T::zero();
    while let Some(node) = queue.pop_front() {
        for &(next, cell) in &adj[node] {
            if seen[next] {
                continue;
            }
            seen[next] = true;
            if next >= m {
                v[next - m] = costs[cell] - u[node];
            } else {
                u[next] = costs[cell] - v[node - m];
            }
            queue.push_back(next);
        }
    }
    debug_assert!(seen.iter().all(|&s| s), "basis is not spanning: {n} columns");
}

/// Cells on the tree path from `from` to `to`, in order.
fn tree_path(adj: &[Vec<(usize, usize)>], from: usize, to: usize, m: usize, n: usize) -> Vec<usize> {
    let mut parent = vec![(usize::MAX, usize::MAX); m + n];
    parent[from] = (from, usize::MAX);
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        if node == to {
            break;
        }
        for &(next, cell) in &adj[node] {
            if parent[next].0 == usize::MAX {
                parent[next] = (node, cell);
                queue.push_back(next);
            }
        }
    }
    let mut cells = Vec::new();
    let mut node = to;
    while node != from {
        let (prev, cell) = parent[node];
        cells.push(cell);
        node = prev;
    }
    cells.reverse();
    cells
}
