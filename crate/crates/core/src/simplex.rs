//! Dense primal simplex for `max c^T v  s.t.  A v <= b, v >= 0` with `b >= 0`.
//!
//! The slack basis is feasible under `b >= 0`, so no phase one is needed.
//! The tableau is kept in condensed form (one column per nonbasic variable)
//! and pivots follow Bland's rule, which rules out cycling.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("right-hand side {index} is negative ({value}); the slack basis is infeasible")]
    NegativeRhs { index: usize, value: f64 },
    #[error("row {row} has {got} coefficients, expected {expected}")]
    Shape { row: usize, got: usize, expected: usize },
    #[error("objective is unbounded along variable {var}")]
    Unbounded { var: usize },
    #[error("no convergence within {cap} pivots")]
    IterationCap { cap: usize },
}

#[derive(Debug, Clone)]
pub struct SimplexSolution {
    /// Optimal values of the structural variables.
    pub primal: Vec<f64>,
    /// Optimal row prices (one per constraint, all `>= 0`).
    pub dual: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

/// Rows with fewer entries than this are pivoted sequentially.
const PAR_ROWS: usize = 256;

pub fn maximize(a: &[Vec<f64>], b: &[f64], c: &[f64], tol: f64) -> Result<SimplexSolution, SimplexError> {
    let m = a.len();
    let n = c.len();
    for (row, r) in a.iter().enumerate() {
        if r.len() != n {
            return Err(SimplexError::Shape { row, got: r.len(), expected: n });
        }
    }
    if let Some(index) = b.iter().position(|&v| v < 0.0) {
        return Err(SimplexError::NegativeRhs { index, value: b[index] });
    }
    let w = n + 1;
    // Row r < m: basic[r] = t[r][n] - sum_j t[r][j] * nonbasic[j].
    // Row m: z = t[m][n] - sum_j t[m][j] * nonbasic[j].
    let mut t = vec![0.0; (m + 1) * w];
    for r in 0..m {
        t[r * w..r * w + n].copy_from_slice(&a[r]);
        t[r * w + n] = b[r];
    }
    for j in 0..n {
        t[m * w + j] = -c[j];
    }
    // Labels: 0..n structural, n..n+m slack.
    let mut basic: Vec<usize> = (n..n + m).collect();
    let mut nonbasic: Vec<usize> = (0..n).collect();

    let cap = 50 * (m + n) + 1000;
    let mut pivots = 0;
    loop {
        let obj = &t[m * w..m * w + n];
        let entering = (0..n).filter(|&j| obj[j] < -tol).min_by_key(|&j| nonbasic[j]);
        let Some(s) = entering else { break };
        if pivots >= cap {
            return Err(SimplexError::IterationCap { cap });
        }

        let mut best: Option<(usize, f64)> = None;
        for r in 0..m {
            let coef = t[r * w + s];
            if coef > tol {
                let ratio = t[r * w + n] / coef;
                best = match best {
                    None => Some((r, ratio)),
                    Some((br, bv)) => {
                        if ratio < bv - 1e-12 || (ratio <= bv + 1e-12 && basic[r] < basic[br]) {
                            Some((r, ratio.min(bv)))
                        } else {
                            Some((br, bv))
                        }
                    }
                };
            }
        }
        let Some((r, _)) = best else {
            return Err(SimplexError::Unbounded { var: nonbasic[s] });
        };
        pivot(&mut t, m + 1, w, r, s);
        std::mem::swap(&mut basic[r], &mut nonbasic[s]);
        pivots += 1;
    }

    let mut primal = vec![0.0; n];
    let mut dual = vec![0.0; m];
    for (r, &label) in basic.iter().enumerate() {
        if label < n {
            primal[label] = t[r * w + n].max(0.0);
        }
    }
    for (j, &label) in nonbasic.iter().enumerate() {
        if label >= n {
            dual[label - n] = t[m * w + j].max(0.0);
        }
    }
    Ok(SimplexSolution { primal, dual, objective: t[m * w + n], pivots })
}

fn pivot(t: &mut [f64], rows: usize, w: usize, r: usize, s: usize) {
    let p = t[r * w + s];
    let mut prow: Vec<f64> = t[r * w..(r + 1) * w].iter().map(|v| v / p).collect();
    prow[s] = 1.0 / p;
    let update = |(i, row): (usize, &mut [f64])| {
        if i == r {
            return;
        }
        let f = row[s];
        if f == 0.0 {
            return;
        }
        for (v, &q) in row.iter_mut().zip(&prow) {
            *v -= f * q;
        }
        row[s] = -f / p;
    };
    if rows >= PAR_ROWS {
        t.par_chunks_mut(w).enumerate().for_each(update);
    } else {
        t.chunks_mut(w).enumerate().for_each(update);
    }
    t[r * w..(r + 1) * w].copy_from_slice(&prow);
}
