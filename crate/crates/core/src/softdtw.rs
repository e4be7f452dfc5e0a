//! Soft-DTW: `R[i][j] = cost[i][j] + min^γ(R[i-1][j-1], R[i-1][j], R[i][j-1])`
//! with `R[0][0] = 0` and `+∞` on the rest of row 0 and column 0, so every
//! path runs from the first cell to the last.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::smoothops::{lse, weight};

const INF: f64 = f64::INFINITY;

/// Largest `T1·T2` accepted by [`dtw_enumerate_paths`].
pub const MAX_DTW_ENUMERATION_CELLS: usize = 25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtwTables {
    pub r: Matrix,
    pub cost: f64,
    pub gamma: f64,
}

fn validate(cost: &Matrix, gamma: f64) -> Result<()> {
    if cost.rows() == 0 || cost.cols() == 0 {
        return Err(Error::invalid("cost matrix must be non-empty"));
    }
    if !cost.all_finite() {
        return Err(Error::invalid("cost matrix contains a non-finite entry"));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be > 0, got {gamma}")));
    }
    Ok(())
}

/// Smooth minimum over the three predecessors, in negated log-sum-exp form.
#[inline]
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    -lse(&[-a, -b, -c], gamma)
}

pub fn dtw_forward(cost: &Matrix, gamma: f64) -> Result<DtwTables> {
    validate(cost, gamma)?;
    let (t1, t2) = cost.shape();
    let mut r = Matrix::filled(t1 + 1, t2 + 1, INF);
    r[(0, 0)] = 0.0;
    for i in 1..=t1 {
        for j in 1..=t2 {
            r[(i, j)] = cost[(i - 1, j - 1)] + softmin3(r[(i - 1, j - 1)], r[(i - 1, j)], r[(i, j - 1)], gamma);
        }
    }
    Ok(DtwTables {
        cost: r[(t1, t2)],
        r,
        gamma,
    })
}

/// `∂cost_total/∂cost[i][j]`: the expected path occupancy of every cell.
pub fn dtw_backward(cost: &Matrix, gamma: f64, tables: &DtwTables) -> Result<Matrix> {
    let (t1, t2) = cost.shape();
    if tables.r.shape() != (t1 + 1, t2 + 1) {
        return Err(Error::shape(format!(
            "tables are {:?}, expected ({}, {})",
            tables.r.shape(),
            t1 + 1,
            t2 + 1
        )));
    }
    if tables.gamma != gamma {
        return Err(Error::invalid("gamma differs from the forward pass"));
    }
    let r = &tables.r;
    let mut adj = Matrix::zeros(t1 + 1, t2 + 1);
    adj[(t1, t2)] = 1.0;
    for i in (1..=t1).rev() {
        for j in (1..=t2).rev() {
            let a = adj[(i, j)];
            if a == 0.0 {
                continue;
            }
            let v = lse(&[-r[(i - 1, j - 1)], -r[(i - 1, j)], -r[(i, j - 1)]], gamma);
            adj[(i - 1, j - 1)] += a * weight(-r[(i - 1, j - 1)], v, gamma);
            adj[(i - 1, j)] += a * weight(-r[(i - 1, j)], v, gamma);
            adj[(i, j - 1)] += a * weight(-r[(i, j - 1)], v, gamma);
        }
    }
    Ok(Matrix::from_fn(t1, t2, |i, j| adj[(i + 1, j + 1)]))
}

/// Exact DTW with traceback; ties prefer diagonal, then up, then left.
/// The path is returned from `(0, 0)` to `(T1−1, T2−1)`.
pub fn dtw_hard(cost: &Matrix) -> Result<(f64, Vec<(usize, usize)>)> {
    validate(cost, 1.0)?;
    let (t1, t2) = cost.shape();
    let mut r = Matrix::filled(t1 + 1, t2 + 1, INF);
    r[(0, 0)] = 0.0;
    for i in 1..=t1 {
        for j in 1..=t2 {
            let m = r[(i - 1, j - 1)].min(r[(i - 1, j)]).min(r[(i, j - 1)]);
            r[(i, j)] = cost[(i - 1, j - 1)] + m;
        }
    }
    let (mut i, mut j) = (t1, t2);
    let mut path = vec![(i - 1, j - 1)];
    while (i, j) != (1, 1) {
        let (diag, up, left) = (r[(i - 1, j - 1)], r[(i - 1, j)], r[(i, j - 1)]);
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((r[(t1, t2)], path))
}

/// Cost of every monotone, continuous path from the first to the last cell.
pub fn dtw_path_costs(cost: &Matrix) -> Result<Vec<f64>> {
    validate(cost, 1.0)?;
    let (t1, t2) = cost.shape();
    if t1 * t2 > MAX_DTW_ENUMERATION_CELLS {
        return Err(Error::invalid(format!(
            "path enumeration limited to {MAX_DTW_ENUMERATION_CELLS} cells, got {t1}x{t2}"
        )));
    }
    fn walk(cost: &Matrix, i: usize, j: usize, acc: f64, out: &mut Vec<f64>) {
        let (t1, t2) = cost.shape();
        let acc = acc + cost[(i, j)];
        if (i, j) == (t1 - 1, t2 - 1) {
            out.push(acc);
            return;
        }
        if i + 1 < t1 && j + 1 < t2 {
            walk(cost, i + 1, j + 1, acc, out);
        }
        if i + 1 < t1 {
            walk(cost, i + 1, j, acc, out);
        }
        if j + 1 < t2 {
            walk(cost, i, j + 1, acc, out);
        }
    }
    let mut out = Vec::new();
    walk(cost, 0, 0, 0.0, &mut out);
    Ok(out)
}

/// `−γ·ln Σ exp(−path_cost/γ)` over all paths; the oracle for [`dtw_forward`].
pub fn dtw_enumerate_paths(cost: &Matrix, gamma: f64) -> Result<f64> {
    validate(cost, gamma)?;
    let neg: Vec<f64> = dtw_path_costs(cost)?.into_iter().map(|c| -c).collect();
    Ok(-lse(&neg, gamma))
}
