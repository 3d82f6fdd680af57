//! Straight-line reimplementation of the carve pipeline on nested `Vec`s.
//!
//! Shares nothing with the library beyond reading model weights. Singular
//! values come from a Jacobi eigen-decomposition of the smaller Gram matrix
//! rather than a one-sided SVD.

use carve_core::{CarveConfig, Tensor, ToyModel};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn mul(a: &Mat, b: &Mat) -> Mat {
    let n = b[0].len();
    a.iter()
        .map(|row| {
            (0..n)
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

fn rotate(v: &[f64], pos: usize, base: f64) -> Vec<f64> {
    let dk = v.len() as f64;
    let mut out = v.to_vec();
    for j in 0..v.len() / 2 {
        let theta = pos as f64 * (-(2.0 * j as f64 / dk) * base.ln()).exp();
        out[2 * j] = v[2 * j] * theta.cos() - v[2 * j + 1] * theta.sin();
        out[2 * j + 1] = v[2 * j] * theta.sin() + v[2 * j + 1] * theta.cos();
    }
    out
}

pub struct LayerOut {
    /// `attn[h][i][j]`.
    pub attn: Vec<Mat>,
    pub z: Mat,
    pub next: Mat,
}

pub fn layer(x: &Mat, pos: &[usize], model: &ToyModel, index: usize) -> LayerOut {
    let spec = model.spec();
    let w = model.layer(index).unwrap();
    let (q, k, v) = (
        mul(x, &to_mat(&w.w_q)),
        mul(x, &to_mat(&w.w_k)),
        mul(x, &to_mat(&w.w_v)),
    );
    let (l, d, dk) = (x.len(), spec.dim, spec.head_dim());
    let mut attn = Vec::new();
    let mut z = vec![vec![0.0; d]; l];
    for h in 0..spec.heads {
        let cols = h * dk..(h + 1) * dk;
        let keys: Vec<Vec<f64>> = (0..l)
            .map(|j| rotate(&k[j][cols.clone()], pos[j], spec.rope_base))
            .collect();
        let mut a = vec![vec![0.0; l]; l];
        for i in 0..l {
            let qi = rotate(&q[i][cols.clone()], pos[i], spec.rope_base);
            let visible = if spec.causal { i + 1 } else { l };
            let scores: Vec<f64> = keys[..visible]
                .iter()
                .map(|kj| qi.iter().zip(kj).map(|(p, q)| p * q).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let total: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..visible {
                a[i][j] = (scores[j] - m).exp() / total;
                for c in cols.clone() {
                    z[i][c] += a[i][j] * v[j][c];
                }
            }
        }
        attn.push(a);
    }
    let proj = mul(&z, &to_mat(&w.w_o));
    let next = x
        .iter()
        .zip(&proj)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect();
    LayerOut { attn, z, next }
}

fn final_block(x: &Mat, model: &ToyModel) -> Mat {
    let (w_in, w_out) = model.ffn();
    let mut h = mul(x, &to_mat(w_in));
    for row in &mut h {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
    let o = mul(&h, &to_mat(w_out));
    x.iter()
        .zip(&o)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect()
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns of the second result.
#[allow(clippy::needless_range_loop)]
pub fn sym_eigen(mut a: Mat) -> (Vec<f64>, Mat) {
    let n = a.len();
    let mut v: Mat = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// `sum_{i < r} |u_i[x] sigma_i|` from the eigen-decomposition of the
/// smaller Gram matrix.
pub fn ics(z: &Mat, rel_tol: f64) -> Vec<f64> {
    let (m, n) = (z.len(), z[0].len());
    let zt = transpose(z);
    // Columns of `proj` are the vectors sigma_i * u_i.
    let (eig, proj): (Vec<f64>, Mat) = if m <= n {
        let (e, u) = sym_eigen(mul(z, &zt));
        let scaled = u
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&e)
                    .map(|(x, l)| x * l.max(0.0).sqrt())
                    .collect()
            })
            .collect();
        (e, scaled)
    } else {
        let (e, v) = sym_eigen(mul(&zt, z));
        (e, mul(z, &v))
    };
    let sigma: Vec<f64> = eig.iter().map(|l| l.max(0.0).sqrt()).collect();
    let smax = sigma.iter().cloned().fold(0.0, f64::max);
    let threshold = (rel_tol * smax).max(m.max(n) as f64 * smax * f64::EPSILON);
    (0..m)
        .map(|x| {
            (0..sigma.len())
                .filter(|&i| sigma[i] > threshold)
                .map(|i| proj[x][i].abs())
                .sum()
        })
        .collect()
}

fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Indices of `items` in descending order of `key`, earlier position first on ties.
fn order_desc(key: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for i in 0..key.len() {
        let at = out
            .iter()
            .position(|&j| key[i] > key[j])
            .unwrap_or(out.len());
        out.insert(at, i);
    }
    out
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return -1.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

pub struct Reference {
    pub stage1_kept: Vec<usize>,
    pub kept: Vec<usize>,
    pub position_ids: Vec<usize>,
    pub final_hidden: Mat,
}

/// Carves `x` (`system + visual + prompt` rows, positions `0..L`).
pub fn carve(
    x: &Mat,
    system: usize,
    visual: usize,
    model: &ToyModel,
    cfg: &CarveConfig,
) -> Reference {
    let l = x.len();
    let c = cfg.carve_after_layer;
    let mut pos: Vec<usize> = (0..l).collect();
    let mut h = x.clone();
    let mut carve_out = None;
    for index in 1..=c {
        let out = layer(&h, &pos, model, index);
        h = out.next.clone();
        carve_out = Some(out);
    }
    let carve_out = carve_out.unwrap();
    let z_vis: Mat = carve_out.z[system..system + visual].to_vec();

    let info = ics(&z_vis, cfg.rank_rel_tol);
    let heads = carve_out.attn.len();
    let attn: Vec<f64> = (system..system + visual)
        .map(|col| {
            let mut s = 0.0;
            for a in &carve_out.attn {
                for row in a {
                    s += row[col];
                }
            }
            s / (heads * l) as f64
        })
        .collect();
    let (ni, na) = (minmax(&info), minmax(&attn));
    let score: Vec<f64> = (0..visual)
        .map(|i| (1.0 - cfg.lambda) * ni[i] + cfg.lambda * na[i])
        .collect();

    let k = (cfg.target_count as f64 * (1.0 + cfg.merge_proportion) + 0.5).floor() as usize;
    let merges = k - cfg.target_count;
    let ranked = order_desc(&score);
    let mut stage1: Vec<usize> = ranked[..k].to_vec();
    // `ranked[..k]` is already in score order.
    let set_a: Vec<usize> = stage1[..k.div_ceil(2)].to_vec();
    let set_b: Vec<usize> = stage1[k.div_ceil(2)..].to_vec();
    stage1.sort_unstable();

    let best: Vec<(f64, usize)> = set_b
        .iter()
        .map(|&b| {
            let mut arg = 0;
            let mut val = f64::NEG_INFINITY;
            for (j, &a) in set_a.iter().enumerate() {
                let s = cosine(&z_vis[b], &z_vis[a]);
                if s > val {
                    val = s;
                    arg = j;
                }
            }
            (val, arg)
        })
        .collect();
    let maxima: Vec<f64> = best.iter().map(|b| b.0).collect();
    let merge_order: Vec<usize> = order_desc(&maxima)[..merges].to_vec();

    let mut rows: Vec<Option<(Vec<f64>, f64)>> = (0..visual).map(|_| None).collect();
    for &i in &stage1 {
        rows[i] = Some((h[system + i].clone(), 1.0));
    }
    for &bi in &merge_order {
        let src = set_b[bi];
        let dst = set_a[best[bi].1];
        let (sv, sn) = rows[src].take().unwrap();
        let (dv, dn) = rows[dst].as_mut().unwrap();
        for (d, s) in dv.iter_mut().zip(&sv) {
            *d = (*d * *dn + s * sn) / (*dn + sn);
        }
        *dn += sn;
    }

    let kept: Vec<usize> = (0..visual).filter(|&i| rows[i].is_some()).collect();
    let mut next: Mat = h[..system].to_vec();
    next.extend(kept.iter().map(|&i| rows[i].as_ref().unwrap().0.clone()));
    next.extend(h[system + visual..].iter().cloned());
    pos = (0..system).collect();
    pos.extend(kept.iter().map(|&i| system + i));
    pos.extend(system + visual..l);

    let mut h = next;
    for index in c + 1..=model.layer_count() {
        h = layer(&h, &pos, model, index).next;
    }
    Reference {
        stage1_kept: stage1,
        kept,
        position_ids: pos,
        final_hidden: final_block(&h, model),
    }
}
