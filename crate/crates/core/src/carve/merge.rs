//! Stage II: split the Stage-I survivors by score and fold the most redundant
//! lower-scored tokens into their most similar higher-scored partners.

use serde::{Deserialize, Serialize};

use crate::error::{CarveError, Result};
use crate::ipgs::{argsort_desc, ScoreReport};
use crate::linalg::{dot, l2_normalize_rows, Tensor};

/// Splits `intermediate` (visual indices) into the higher-scored half `A`
/// (ceiling) and the rest `B`, both in descending score order.
pub fn partition_sets(intermediate: &[usize], report: &ScoreReport) -> (Vec<usize>, Vec<usize>) {
    let scores: Vec<f64> = intermediate.iter().map(|&i| report.combined[i]).collect();
    let ordered: Vec<usize> = argsort_desc(&scores)
        .into_iter()
        .map(|k| intermediate[k])
        .collect();
    let k = ordered.len();
    if k < 2 {
        log::warn!("only {k} intermediate token(s); skipping merge");
    }
    let split = k.div_ceil(2);
    (ordered[..split].to_vec(), ordered[split..].to_vec())
}

/// Cosine similarities `norm(Z_B) norm(Z_A)^T`, shape `|B| x |A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarity {
    pub matrix: Tensor,
    /// Rows of `B` with zero norm; their similarities are pinned to -1.
    pub zero_b: Vec<usize>,
    /// Rows of `A` with zero norm; their column is pinned to -1.
    pub zero_a: Vec<usize>,
}

pub fn similarity_matrix(z_b: &Tensor, z_a: &Tensor) -> Result<Similarity> {
    let (nb, db) = z_b.shape2()?;
    let (na, da) = z_a.shape2()?;
    if nb == 0 || na == 0 {
        return Err(CarveError::Input(
            "similarity needs two non-empty sets".into(),
        ));
    }
    if db != da {
        return Err(CarveError::shape(
            "similarity_matrix",
            format!("row widths differ: {db} vs {da}"),
        ));
    }
    let b = l2_normalize_rows(z_b);
    let a = l2_normalize_rows(z_a);
    let mut out = vec![0.0; nb * na];
    for i in 0..nb {
        for j in 0..na {
            out[i * na + j] = if b.zero_rows.contains(&i) || a.zero_rows.contains(&j) {
                -1.0
            } else {
                dot(b.tensor.row(i), a.tensor.row(j)).clamp(-1.0, 1.0)
            };
        }
    }
    if !b.zero_rows.is_empty() || !a.zero_rows.is_empty() {
        log::warn!(
            "zero-norm rows in similarity input (B: {:?}, A: {:?})",
            b.zero_rows,
            a.zero_rows
        );
    }
    Ok(Similarity {
        matrix: Tensor::new(vec![nb, na], out)?,
        zero_b: b.zero_rows,
        zero_a: a.zero_rows,
    })
}

/// One merge: visual token `source` folds into visual token `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeEdge {
    pub source: usize,
    pub target: usize,
}

/// Picks the `merges` rows of `B` whose best match in `A` is strongest and
/// pairs each with that match. Ties go to the earlier row / column, i.e. the
/// higher-scored token. Edges come back in merge order.
pub fn stage2_merge(
    set_a: &[usize],
    set_b: &[usize],
    similarity: &Similarity,
    merges: usize,
) -> Result<Vec<MergeEdge>> {
    if merges > set_b.len() {
        return Err(CarveError::Config(format!(
            "cannot merge {merges} tokens out of a set of {}",
            set_b.len()
        )));
    }
    if merges == 0 {
        return Ok(Vec::new());
    }
    let m = &similarity.matrix;
    if m.dims() != [set_b.len(), set_a.len()] {
        return Err(CarveError::shape(
            "stage2_merge",
            format!(
                "similarity {:?} vs sets {}x{}",
                m.dims(),
                set_b.len(),
                set_a.len()
            ),
        ));
    }
    let best: Vec<(f64, usize)> = (0..set_b.len())
        .map(|i| {
            let row = m.row(i);
            let mut arg = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[arg] {
                    arg = j;
                }
            }
            (row[arg], arg)
        })
        .collect();
    let maxima: Vec<f64> = best.iter().map(|b| b.0).collect();
    Ok(argsort_desc(&maxima)
        .into_iter()
        .take(merges)
        .map(|i| MergeEdge {
            source: set_b[i],
            target: set_a[best[i].1],
        })
        .collect())
}

/// Result of folding a set of rows together.
#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    /// One row per survivor, in ascending index order.
    pub rows: Tensor,
    pub survivors: Vec<usize>,
    /// Members represented by each survivor (itself included).
    pub sizes: Vec<usize>,
}

/// Keeps `kept` rows of `per_token` (indexed by visual token) and applies the
/// merge edges as running size-weighted means, in edge order.
pub fn apply_merges(per_token: &Tensor, kept: &[usize], edges: &[MergeEdge]) -> Result<Merged> {
    let (rows, cols) = per_token.shape2()?;
    let mut sums: Vec<Option<(Vec<f64>, usize)>> = vec![None; rows];
    for &k in kept {
        if k >= rows {
            return Err(CarveError::shape(
                "apply_merges",
                format!("token {k} of {rows}"),
            ));
        }
        sums[k] = Some((per_token.row(k).to_vec(), 1));
    }
    for e in edges {
        let (src, src_size) = sums
            .get_mut(e.source)
            .and_then(Option::take)
            .ok_or_else(|| CarveError::Input(format!("merge source {} is not live", e.source)))?;
        let (dst, dst_size) = sums
            .get_mut(e.target)
            .and_then(Option::as_mut)
            .ok_or_else(|| CarveError::Input(format!("merge target {} is not live", e.target)))?;
        let total = (*dst_size + src_size) as f64;
        let (wd, ws) = (*dst_size as f64, src_size as f64);
        for (d, s) in dst.iter_mut().zip(&src) {
            *d = (*d * wd + s * ws) / total;
        }
        *dst_size += src_size;
    }
    let mut data = Vec::new();
    let mut survivors = Vec::new();
    let mut sizes = Vec::new();
    for (i, slot) in sums.into_iter().enumerate() {
        if let Some((row, size)) = slot {
            data.extend(row);
            survivors.push(i);
            sizes.push(size);
        }
    }
    Ok(Merged {
        rows: Tensor::new(vec![survivors.len(), cols], data)?,
        survivors,
        sizes,
    })
}
