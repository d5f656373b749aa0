use super::Tensor;
use crate::error::{Error, Result};

/// Numerical rank by Gaussian elimination with full pivoting. Elimination
/// stops once the largest remaining pivot is at most `tol · max|entry|`.
pub fn rank_of(m: &Tensor, tol: f64) -> Result<usize> {
    if m.ndim() != 2 {
        return Err(Error::contract(format!(
            "rank_of: expected a matrix, got {:?}",
            m.shape()
        )));
    }
    let (rows, cols) = (m.rows(), m.cols());
    let scale = m.max_abs();
    if scale == 0.0 {
        return Ok(0);
    }
    let threshold = tol * scale;
    let mut a = m.data().to_vec();
    let mut rank = 0;
    for step in 0..rows.min(cols) {
        let (mut pr, mut pc, mut best) = (step, step, 0.0f64);
        for r in step..rows {
            for c in step..cols {
                let v = a[r * cols + c].abs();
                if v > best {
                    (pr, pc, best) = (r, c, v);
                }
            }
        }
        if best <= threshold {
            break;
        }
        if pr != step {
            for c in 0..cols {
                a.swap(step * cols + c, pr * cols + c);
            }
        }
        if pc != step {
            for r in 0..rows {
                a.swap(r * cols + step, r * cols + pc);
            }
        }
        let pivot = a[step * cols + step];
        for r in step + 1..rows {
            let f = a[r * cols + step] / pivot;
            if f == 0.0 {
                continue;
            }
            for c in step..cols {
                a[r * cols + c] -= f * a[step * cols + c];
            }
        }
        rank += 1;
    }
    Ok(rank)
}
