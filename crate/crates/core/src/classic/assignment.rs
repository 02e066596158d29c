//! Hungarian method (shortest augmenting paths with potentials), O(n^3).

use super::ClassicError;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `row_to_col[i]` is the column assigned to row `i`.
    pub row_to_col: Vec<usize>,
    /// Sum of the selected entries of the input matrix, in row order.
    pub total_cost: f64,
}

impl Assignment {
    pub fn col_to_row(&self) -> Vec<usize> {
        let mut inv = vec![0; self.row_to_col.len()];
        for (r, &c) in self.row_to_col.iter().enumerate() {
            inv[c] = r;
        }
        inv
    }
}

/// Minimum-cost perfect assignment on a square matrix. `+inf` entries are
/// forbidden; they are replaced internally by a sentinel that exceeds the
/// cost of any all-finite assignment, and an optimum that still selects one
/// is reported as infeasible.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<Assignment, ClassicError> {
    let n = cost.len();
    if let Some(row) = cost.iter().find(|r| r.len() != n) {
        return Err(ClassicError::NotSquare {
            rows: n,
            cols: row.len(),
        });
    }
    if n == 0 {
        return Ok(Assignment {
            row_to_col: Vec::new(),
            total_cost: 0.0,
        });
    }
    let mut max_abs: f64 = 0.0;
    for &x in cost.iter().flatten() {
        if x.is_nan() || x == f64::NEG_INFINITY {
            return Err(ClassicError::InvalidEntry);
        }
        if x.is_finite() {
            max_abs = max_abs.max(x.abs());
        }
    }
    let sentinel = 2.0 * (max_abs + 1.0) * (n as f64 + 1.0);
    let at = |i: usize, j: usize| {
        let x = cost[i][j];
        if x.is_finite() {
            x
        } else {
            sentinel
        }
    };

    // 1-based potentials; column 0 is a virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                // strict comparison keeps the lowest column index on ties
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[row_of[j] - 1] = j - 1;
    }
    let mut total_cost = 0.0;
    for (i, &j) in row_to_col.iter().enumerate() {
        if !cost[i][j].is_finite() {
            return Err(ClassicError::Infeasible);
        }
        total_cost += cost[i][j];
    }
    Ok(Assignment {
        row_to_col,
        total_cost,
    })
}
