//! Rectangular linear assignment by the Hungarian method with potentials.

use alloc::vec;
use alloc::vec::Vec;

/// Minimum-cost assignment of a `rows x cols` row-major cost matrix.
///
/// The matrix is padded to a square with `pad` cost. Returns, for each row,
/// the assigned column or `None` when the row went to a padding column.
/// Scans run in increasing index order with strict comparisons, so ties
/// resolve toward lower indices and results are reproducible.
pub fn min_cost_assignment(rows: usize, cols: usize, cost: &[f64], pad: f64) -> Vec<Option<usize>> {
    assert_eq!(cost.len(), rows * cols, "cost matrix size mismatch");
    let n = rows.max(cols);
    if n == 0 {
        return Vec::new();
    }
    let at = |i: usize, j: usize| -> f64 {
        if i < rows && j < cols {
            cost[i * cols + j]
        } else {
            pad
        }
    };

    // 1-based potentials; column 0 is a sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
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
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for (j, &i) in row_of_col.iter().enumerate().take(n + 1).skip(1) {
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

/// Maximum-weight assignment; padding has weight 0.
pub fn max_weight_assignment(rows: usize, cols: usize, weights: &[f64]) -> Vec<Option<usize>> {
    let cost: Vec<f64> = weights.iter().map(|w| -w).collect();
    min_cost_assignment(rows, cols, &cost, 0.0)
}
