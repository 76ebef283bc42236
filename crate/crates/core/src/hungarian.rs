//! Minimum-cost rectangular assignment.

use crate::error::{Error, Result};

/// Shortest-augmenting-path solver for `n <= m`. Returns the column of every row.
fn solve_wide(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based potentials and matching, column 0 is a virtual source
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            cols[owner[j] - 1] = j - 1;
        }
    }
    cols
}

fn total(cost: &[Vec<f64>], cols: &[usize]) -> f64 {
    cols.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
}

/// Optimal cost of the wide problem with row `r` and column `c` removed.
fn reduced_optimum(cost: &[Vec<f64>], fixed_rows: &[(usize, usize)]) -> f64 {
    let rows: Vec<usize> = (0..cost.len()).filter(|i| fixed_rows.iter().all(|f| f.0 != *i)).collect();
    if rows.is_empty() {
        return 0.0;
    }
    let cols: Vec<usize> = (0..cost[0].len()).filter(|j| fixed_rows.iter().all(|f| f.1 != *j)).collect();
    let sub: Vec<Vec<f64>> = rows.iter().map(|&i| cols.iter().map(|&j| cost[i][j]).collect()).collect();
    total(&sub, &solve_wide(&sub))
}

/// Lexicographically smallest optimal column vector of a wide problem.
fn lexicographic_wide(cost: &[Vec<f64>]) -> Vec<usize> {
    let best = total(cost, &solve_wide(cost));
    let tol = 1e-9 * (1.0 + best.abs());
    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(cost.len());
    let mut acc = 0.0;
    for r in 0..cost.len() {
        let mut chosen = None;
        for c in 0..cost[0].len() {
            if fixed.iter().any(|f| f.1 == c) {
                continue;
            }
            fixed.push((r, c));
            let value = acc + cost[r][c] + reduced_optimum(cost, &fixed);
            fixed.pop();
            if value <= best + tol {
                chosen = Some(c);
                break;
            }
        }
        let c = chosen.expect("some column extends an optimal assignment");
        acc += cost[r][c];
        fixed.push((r, c));
    }
    fixed.into_iter().map(|(_, c)| c).collect()
}

/// Minimum-cost injective assignment on a `rows × cols` matrix; returns
/// `min(rows, cols)` (row, col) pairs sorted by row. Among optimal
/// assignments, the one whose index vector over the smaller side is
/// lexicographically smallest is returned.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::Invalid("assignment on an empty cost matrix".into()));
    }
    if cost.iter().any(|r| r.len() != cols) {
        return Err(Error::Invalid("ragged cost matrix".into()));
    }
    if cost.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("cost matrix has non-finite entries".into()));
    }
    if rows <= cols {
        let assign = lexicographic_wide(cost);
        Ok(assign.into_iter().enumerate().collect())
    } else {
        let t: Vec<Vec<f64>> = (0..cols).map(|j| (0..rows).map(|i| cost[i][j]).collect()).collect();
        let assign = lexicographic_wide(&t);
        let mut pairs: Vec<(usize, usize)> = assign.into_iter().enumerate().map(|(j, i)| (i, j)).collect();
        pairs.sort_unstable();
        Ok(pairs)
    }
}

/// Sum of the assigned entries, accumulated in row order.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| cost[i][j]).sum()
}
