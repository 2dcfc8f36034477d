//! Minimum-cost rectangular assignment (Kuhn-Munkres with row potentials).
//!
//! Maximum-weight matching is obtained by negating the weights.

use super::TrackerError;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Solves the assignment problem on an `n × m` cost matrix given as rows.
///
/// Returns `min(n, m)` pairs. Rectangular input is padded to square with a
/// constant sentinel cost; padded pairs never appear in the output. Among
/// equally good augmenting choices the lowest column index is taken, so the
/// result is a deterministic function of the matrix.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, TrackerError> {
    let n = cost.len();
    let m = cost.first().map_or(0, |r| r.len());
    if cost.iter().any(|r| r.len() != m) {
        return Err(TrackerError::InvalidCost("ragged cost matrix".into()));
    }
    if let Some((i, j)) = cost
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, v)| (i, j, v)))
        .find(|(_, _, v)| !v.is_finite())
        .map(|(i, j, _)| (i, j))
    {
        return Err(TrackerError::InvalidCost(format!(
            "non-finite cost at ({i}, {j})"
        )));
    }
    if n == 0 || m == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }

    let size = n.max(m);
    let sentinel = cost
        .iter()
        .flatten()
        .fold(f64::NEG_INFINITY, |a, &v| a.max(v.abs()))
        + 1.0;
    let at = |i: usize, j: usize| -> f64 {
        if i < n && j < m {
            cost[i][j]
        } else {
            sentinel
        }
    };

    // 1-based potentials; column 0 is the virtual root of each augmenting search.
    let mut u = vec![0.0f64; size + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut row_of_col = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];

    for i in 1..=size {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
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

    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter_map(|j| {
            let i = row_of_col[j];
            (i >= 1 && i <= n && j <= m).then(|| (i - 1, j - 1))
        })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[i][j]).sum();
    Ok(Assignment { pairs, total_cost })
}
