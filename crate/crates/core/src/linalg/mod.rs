//! Dense linear algebra for the scoring and analysis layers.
//!
//! Everything here is a pure function over immutable inputs. Reductions run
//! in a fixed order so results are bit-stable across calls and threads.

mod svd;
mod tensor;

pub use svd::{
    numerical_rank, rank_from_singular_values, scaled_left_singular_vectors, svd, SvdResult,
    DEFAULT_RANK_REL_TOL,
};
pub use tensor::Tensor;

use crate::error::{CarveError, Result};

/// Matrix product of an `m x k` and a `k x n` matrix.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.shape2()?;
    let (k2, n) = b.shape2()?;
    if k != k2 {
        return Err(CarveError::shape(
            "matmul",
            format!("inner dims disagree: {m}x{k} * {k2}x{n}"),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// `a * b^T` without materializing the transpose.
pub fn matmul_transposed(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.shape2()?;
    let (n, k2) = b.shape2()?;
    if k != k2 {
        return Err(CarveError::shape(
            "matmul_transposed",
            format!("inner dims disagree: {m}x{k} * ({n}x{k2})^T"),
        ));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(ar, b.row(j));
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Inner product over the common prefix, summed in eight fixed lanes.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [0.0; 8];
    let (ac, bc) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ac
        .remainder()
        .iter()
        .zip(bc.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ac.zip(bc) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let pairs = [
        lanes[0] + lanes[4],
        lanes[1] + lanes[5],
        lanes[2] + lanes[6],
        lanes[3] + lanes[7],
    ];
    (pairs[0] + pairs[1]) + (pairs[2] + pairs[3]) + tail
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Softmax over the last axis, stabilized by per-row max subtraction.
///
/// Entries equal to `f64::NEG_INFINITY` are treated as masked and receive
/// exactly zero weight; a row must keep at least one finite entry.
pub fn softmax_rows(m: &Tensor) -> Tensor {
    let c = m.cols();
    let mut out = m.data().to_vec();
    for row in out.chunks_mut(c.max(1)) {
        softmax_in_place(row);
    }
    Tensor::from_parts(m.dims().to_vec(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = if *v == f64::NEG_INFINITY {
            0.0
        } else {
            (*v - max).exp()
        };
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise L2 normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedRows {
    pub tensor: Tensor,
    /// Indices of rows with zero norm; those rows are passed through as-is.
    pub zero_rows: Vec<usize>,
}

pub fn l2_normalize_rows(m: &Tensor) -> NormalizedRows {
    let c = m.cols();
    let mut out = m.data().to_vec();
    let mut zero_rows = Vec::new();
    for (i, row) in out.chunks_mut(c.max(1)).enumerate() {
        let n = norm2(row);
        if n == 0.0 {
            zero_rows.push(i);
            continue;
        }
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    NormalizedRows {
        tensor: Tensor::from_parts(m.dims().to_vec(), out),
        zero_rows,
    }
}

/// Cosine of the angle between two vectors; `None` if either is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (sa, sb) = (dot(a, a), dot(b, b));
    if sa == 0.0 || sb == 0.0 {
        return None;
    }
    // One square root keeps cosine(a, a) at exactly 1.
    let prod = sa * sb;
    let denom = if prod.is_normal() {
        prod.sqrt()
    } else {
        sa.sqrt() * sb.sqrt()
    };
    Some((dot(a, b) / denom).clamp(-1.0, 1.0))
}
