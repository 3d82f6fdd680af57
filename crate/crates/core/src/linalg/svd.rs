//! Full singular value decomposition by one-sided (Hestenes) Jacobi rotations.
//!
//! Columns of the working matrix are rotated pairwise until they are mutually
//! orthogonal; their norms are then the singular values and the accumulated
//! rotations form `V`. Left singular vectors for zero (or numerically
//! vanishing) singular values, and the extra columns of a tall `U`, are filled
//! in by orthogonal completion against the standard basis.

use serde::{Deserialize, Serialize};

use super::{dot, Tensor};
use crate::error::{CarveError, Result};

/// Relative cutoff `sigma_i > tol * sigma_max` used when none is configured.
pub const DEFAULT_RANK_REL_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdResult {
    /// `m x m`, orthogonal.
    pub u: Tensor,
    /// `min(m, n)` values, descending.
    pub sigma: Vec<f64>,
    /// `n x n`, orthogonal.
    pub vt: Tensor,
}

impl SvdResult {
    /// `u * diag(sigma) * vt`.
    pub fn reconstruct(&self) -> Tensor {
        let m = self.u.rows();
        let n = self.vt.rows();
        let mut out = vec![0.0; m * n];
        for (k, &s) in self.sigma.iter().enumerate() {
            if s == 0.0 {
                continue;
            }
            let vrow = self.vt.row(k);
            for i in 0..m {
                let coef = self.u.get(i, k) * s;
                for (o, v) in out[i * n..(i + 1) * n].iter_mut().zip(vrow) {
                    *o += coef * v;
                }
            }
        }
        Tensor::from_parts(vec![m, n], out)
    }
}

/// Computes `m = u * diag(sigma) * vt`.
///
/// Deterministic: the first component of each `u` column whose magnitude
/// exceeds machine epsilon is non-negative, with the matching `vt` row
/// flipped alongside.
pub fn svd(m: &Tensor) -> Result<SvdResult> {
    let (rows, cols) = m.shape2()?;
    if rows == 0 || cols == 0 {
        return Err(CarveError::shape("svd", "empty matrix"));
    }
    let mut res = if rows >= cols {
        jacobi_tall(m)?
    } else {
        // A^T = V S U^T, so swap the factors of the transposed problem.
        let t = jacobi_tall(&m.transpose()?)?;
        SvdResult {
            u: t.vt.transpose()?,
            sigma: t.sigma,
            vt: t.u.transpose()?,
        }
    };
    fix_signs(&mut res);
    Ok(res)
}

/// One-sided Jacobi for `rows >= cols`.
fn jacobi_tall(m: &Tensor) -> Result<SvdResult> {
    let (rows, cols) = m.shape2()?;
    // Column-major working copies.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m.get(i, j)).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            let mut e = vec![0.0; cols];
            e[j] = 1.0;
            e
        })
        .collect();

    orthogonalize(&mut a, Some(&mut v), rows)?;

    let norms: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let sigma_max = sigma[0];
    let negligible = sigma_max * f64::EPSILON * rows.max(cols) as f64;

    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rows);
    let mut u_cols: Vec<Option<Vec<f64>>> = Vec::with_capacity(cols);
    for (k, &j) in order.iter().enumerate() {
        let s = sigma[k];
        if s == 0.0 || s <= negligible {
            u_cols.push(None);
            continue;
        }
        let mut col: Vec<f64> = a[j].iter().map(|x| x / s).collect();
        // A second projection pass cleans up the rounding left by Jacobi.
        project_out(&mut col, &basis);
        let n = dot(&col, &col).sqrt();
        if n < 0.5 {
            u_cols.push(None);
            continue;
        }
        col.iter_mut().for_each(|x| *x /= n);
        basis.push(col.clone());
        u_cols.push(Some(col));
    }

    let mut candidate = 0;
    let mut fill = |basis: &mut Vec<Vec<f64>>| -> Vec<f64> {
        let col = next_completion(basis, rows, &mut candidate);
        basis.push(col.clone());
        col
    };
    let mut u_full: Vec<Vec<f64>> = Vec::with_capacity(rows);
    for slot in u_cols {
        match slot {
            Some(col) => u_full.push(col),
            None => u_full.push(fill(&mut basis)),
        }
    }
    while u_full.len() < rows {
        u_full.push(fill(&mut basis));
    }

    let mut u = vec![0.0; rows * rows];
    for (k, col) in u_full.iter().enumerate() {
        for i in 0..rows {
            u[i * rows + k] = col[i];
        }
    }
    let mut vt = vec![0.0; cols * cols];
    for (k, &j) in order.iter().enumerate() {
        vt[k * cols..(k + 1) * cols].copy_from_slice(&v[j]);
    }
    Ok(SvdResult {
        u: Tensor::from_parts(vec![rows, rows], u),
        sigma,
        vt: Tensor::from_parts(vec![cols, cols], vt),
    })
}

/// Rotates the columns in `a` pairwise until mutually orthogonal, applying
/// the same rotations to `acc` when given. `len` is the column length.
fn orthogonalize(a: &mut [Vec<f64>], mut acc: Option<&mut [Vec<f64>]>, len: usize) -> Result<()> {
    let cols = a.len();
    let tol = f64::EPSILON * (len as f64).sqrt();
    let mut converged = cols < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(CarveError::Convergence { iterations: sweeps });
        }
        sweeps += 1;
        converged = true;
        // Squared norms, refreshed every sweep and updated in place per rotation.
        let mut sq: Vec<f64> = a.iter().map(|c| dot(c, c)).collect();
        // Keep columns in descending norm order; this cuts the sweep count
        // sharply on matrices with a few dominant directions.
        let mut order: Vec<usize> = (0..cols).collect();
        order.sort_by(|&i, &j| sq[j].total_cmp(&sq[i]));
        permute(a, &order);
        if let Some(acc) = acc.as_deref_mut() {
            permute(acc, &order);
        }
        sq = order.iter().map(|&i| sq[i]).collect();
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let (alpha, beta) = (sq[p], sq[q]);
                if alpha < f64::MIN_POSITIVE || beta < f64::MIN_POSITIVE {
                    continue;
                }
                let gamma = dot(&a[p], &a[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(a, p, q, c, s);
                if let Some(acc) = acc.as_deref_mut() {
                    rotate(acc, p, q, c, s);
                }
                sq[p] = (alpha - t * gamma).max(0.0);
                sq[q] = beta + t * gamma;
                if sq[p] < sq[q] {
                    sq.swap(p, q);
                    a.swap(p, q);
                    if let Some(acc) = acc.as_deref_mut() {
                        acc.swap(p, q);
                    }
                }
            }
        }
    }
    Ok(())
}

/// Singular values (descending) of `m` paired with the scaled left singular
/// vectors `sigma_i * u_i`, each of length `rows`.
///
/// Uses a thin Golub-Kahan SVD without `V`, several times faster than the
/// Jacobi route of [`svd`] on noisy square inputs.
pub fn scaled_left_singular_vectors(m: &Tensor) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let (rows, cols) = m.shape2()?;
    if rows == 0 || cols == 0 {
        return Err(CarveError::shape("svd", "empty matrix"));
    }
    let a = nalgebra::DMatrix::from_row_slice(rows, cols, m.data());
    let max_iter = 200 * rows.min(cols);
    let res = nalgebra::SVD::try_new_unordered(a, true, false, f64::EPSILON, max_iter).ok_or(
        CarveError::Convergence {
            iterations: max_iter,
        },
    )?;
    let u = res.u.expect("U was requested");
    let mut pairs: Vec<(f64, Vec<f64>)> = res
        .singular_values
        .iter()
        .zip(u.column_iter())
        .map(|(&s, col)| (s, col.iter().map(|x| x * s).collect()))
        .collect();
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));
    Ok(pairs.into_iter().unzip())
}

fn permute(cols: &mut [Vec<f64>], order: &[usize]) {
    let taken: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| std::mem::take(&mut cols[i]))
        .collect();
    for (slot, col) in cols.iter_mut().zip(taken) {
        *slot = col;
    }
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

fn project_out(col: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let d = dot(col, b);
        col.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
    }
}

/// Next standard basis vector (in index order) with a usable component
/// orthogonal to `basis`, orthonormalized with two projection passes.
fn next_completion(basis: &[Vec<f64>], dim: usize, candidate: &mut usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    while *candidate < dim {
        let mut e = vec![0.0; dim];
        e[*candidate] = 1.0;
        *candidate += 1;
        project_out(&mut e, basis);
        project_out(&mut e, basis);
        let n = dot(&e, &e).sqrt();
        if n > 1e-3 {
            e.iter_mut().for_each(|x| *x /= n);
            return e;
        }
        if best.as_ref().is_none_or(|(bn, _)| n > *bn) {
            best = Some((n, e));
        }
    }
    // The remaining complement always has a component along some e_k whose
    // squared length is at least its dimension / dim, so this is unreachable
    // in exact arithmetic; fall back to the best seen candidate.
    let (n, mut e) = best.unwrap_or((1.0, vec![0.0; dim]));
    e.iter_mut().for_each(|x| *x /= n);
    e
}

fn fix_signs(res: &mut SvdResult) {
    let m = res.u.rows();
    let n = res.vt.rows();
    for k in 0..m {
        let first = (0..m)
            .map(|i| res.u.get(i, k))
            .find(|x| x.abs() > f64::EPSILON);
        if matches!(first, Some(x) if x < 0.0) {
            for i in 0..m {
                let x = res.u.get(i, k);
                res.u.set(i, k, -x);
            }
            if k < n {
                res.vt.row_mut(k).iter_mut().for_each(|x| *x = -*x);
            }
        }
    }
}

/// Count of singular values above `max(rel_tol * sigma_max, max(m, n) * sigma_max * eps)`.
pub fn rank_from_singular_values(sigma: &[f64], dims: (usize, usize), rel_tol: f64) -> usize {
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    if sigma_max == 0.0 {
        return 0;
    }
    let floor = dims.0.max(dims.1) as f64 * sigma_max * f64::EPSILON;
    let threshold = (rel_tol * sigma_max).max(floor);
    sigma.iter().filter(|&&s| s > threshold).count()
}

pub fn numerical_rank(m: &Tensor, rel_tol: f64) -> Result<usize> {
    if !(rel_tol > 0.0 && rel_tol < 1.0) {
        return Err(CarveError::Config(format!(
            "rank tolerance must lie in (0, 1), got {rel_tol}"
        )));
    }
    let dims = m.shape2()?;
    let res = svd(m)?;
    Ok(rank_from_singular_values(&res.sigma, dims, rel_tol))
}
