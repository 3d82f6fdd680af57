//! Information-preservation-guided selection: per-visual-token scores.
//!
//! * Information contribution: `C(x) = sum_{i < r} |U[x, i] * sigma_i|` over the
//!   SVD of the visual slice of the attention output, `r` its numerical rank.
//! * Attention score: mean attention the token receives across heads and
//!   query rows.
//! * Combined: `(1 - lambda) * norm(C) + lambda * norm(S)` with min-max
//!   normalization over the visual tokens.

use serde::{Deserialize, Serialize};

use crate::attention::TokenSequence;
use crate::error::{CarveError, Result};
use crate::linalg::{rank_from_singular_values, scaled_left_singular_vectors, Tensor};

/// Which query rows enter the attention-score mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMeanMode {
    /// Every query row, including causally masked zeros: `mean(A[:, :, x])`.
    #[default]
    AllQueries,
    /// Only query rows that can see the token (`q >= column` under causality).
    Unmasked,
    /// Only query rows inside the visual segment.
    VisualQueries,
}

/// Min/max used to map a score vector onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
    /// Set when `max == min`; the normalized vector is then all zeros.
    pub constant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub ics: MinMax,
    pub attn_score: MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub ics: Vec<f64>,
    pub attn_score: Vec<f64>,
    pub combined: Vec<f64>,
    pub lambda: f64,
    pub normalization: Normalization,
}

impl ScoreReport {
    pub fn len(&self) -> usize {
        self.combined.len()
    }

    pub fn is_empty(&self) -> bool {
        self.combined.is_empty()
    }
}

pub fn information_contribution(z_visual: &Tensor, rank_rel_tol: f64) -> Result<Vec<f64>> {
    let (rows, cols) = z_visual.shape2()?;
    if rows == 0 {
        return Err(CarveError::Input("no visual tokens to score".into()));
    }
    let (sigma, scaled) = scaled_left_singular_vectors(z_visual)?;
    let r = rank_from_singular_values(&sigma, (rows, cols), rank_rel_tol);
    Ok((0..rows)
        .map(|x| scaled[..r].iter().map(|col| col[x].abs()).sum())
        .collect())
}

/// Attention received by each visual token, averaged over heads and the
/// query rows selected by `mode`.
pub fn attention_score(
    attn: &Tensor,
    seq: &TokenSequence,
    mode: AttentionMeanMode,
) -> Result<Vec<f64>> {
    let dims = attn.dims();
    let l = seq.len();
    if dims.len() != 3 || dims[1] != l || dims[2] != l {
        return Err(CarveError::shape(
            "attention_score",
            format!("attention dims {dims:?} do not match a {l}-token sequence"),
        ));
    }
    let seg = seq.segments();
    if seg.visual == 0 {
        return Err(CarveError::Input("no visual tokens to score".into()));
    }
    let heads = dims[0];
    let scores = seg
        .visual_range()
        .map(|col| {
            let queries = match mode {
                AttentionMeanMode::AllQueries => 0..l,
                AttentionMeanMode::Unmasked => col..l,
                AttentionMeanMode::VisualQueries => seg.visual_range(),
            };
            let count = (heads * queries.len()) as f64;
            let mut sum = 0.0;
            for h in 0..heads {
                for q in queries.clone() {
                    sum += attn.get3(h, q, col);
                }
            }
            sum / count
        })
        .collect();
    Ok(scores)
}

fn min_max_normalize(v: &[f64]) -> (Vec<f64>, MinMax) {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() || max <= min {
        let (min, max) = if v.is_empty() { (0.0, 0.0) } else { (min, max) };
        return (
            vec![0.0; v.len()],
            MinMax {
                min,
                max,
                constant: true,
            },
        );
    }
    let span = max - min;
    (
        v.iter().map(|x| (x - min) / span).collect(),
        MinMax {
            min,
            max,
            constant: false,
        },
    )
}

pub fn combined_score(ics: &[f64], attn_score: &[f64], lambda: f64) -> Result<ScoreReport> {
    if ics.len() != attn_score.len() {
        return Err(CarveError::Input(format!(
            "score length mismatch: {} ICS vs {} attention",
            ics.len(),
            attn_score.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CarveError::Config(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let (c, c_meta) = min_max_normalize(ics);
    let (s, s_meta) = min_max_normalize(attn_score);
    let combined = c
        .iter()
        .zip(&s)
        .map(|(c, s)| (1.0 - lambda) * c + lambda * s)
        .collect();
    Ok(ScoreReport {
        ics: ics.to_vec(),
        attn_score: attn_score.to_vec(),
        combined,
        lambda,
        normalization: Normalization {
            ics: c_meta,
            attn_score: s_meta,
        },
    })
}

/// Indices sorted by value descending; equal values keep ascending index order.
pub fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

pub fn rank_tokens(report: &ScoreReport) -> Vec<usize> {
    argsort_desc(&report.combined)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use crate::attention::Segments;
    use crate::linalg::{svd, DEFAULT_RANK_REL_TOL};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(seed: u64, r: usize, c: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            vec![r, c],
            (0..r * c).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap()
    }

    fn seq_of(segments: Segments) -> TokenSequence {
        TokenSequence::new(Tensor::zeros(&[segments.total(), 2]), segments).unwrap()
    }

    /// `sum_i |(Z v_i)_x|` with right singular vectors from a power-free
    /// route: Jacobi eigenvectors of `Z^T Z`.
    fn ics_oracle(z: &Tensor) -> Vec<f64> {
        let n = z.cols();
        let mut g: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| (0..z.rows()).map(|k| z.get(k, i) * z.get(k, j)).sum())
                    .collect()
            })
            .collect();
        let mut v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        for _ in 0..100 {
            for p in 0..n {
                for q in p + 1..n {
                    if g[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let th = (g[q][q] - g[p][p]) / (2.0 * g[p][q]);
                    let t = th.signum() / (th.abs() + (th * th + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (a, b) = (g[k][p], g[k][q]);
                        g[k][p] = c * a - s * b;
                        g[k][q] = s * a + c * b;
                    }
                    for k in 0..n {
                        let (a, b) = (g[p][k], g[q][k]);
                        g[p][k] = c * a - s * b;
                        g[q][k] = s * a + c * b;
                    }
                    for row in v.iter_mut() {
                        let (a, b) = (row[p], row[q]);
                        row[p] = c * a - s * b;
                        row[q] = s * a + c * b;
                    }
                }
            }
        }
        (0..z.rows())
            .map(|x| {
                (0..n)
                    .map(|i| (0..n).map(|k| z.get(x, k) * v[k][i]).sum::<f64>().abs())
                    .sum()
            })
            .collect()
    }

    #[test]
    fn ics_of_identity_and_diagonal() {
        assert_eq!(
            information_contribution(&Tensor::identity(3), DEFAULT_RANK_REL_TOL).unwrap(),
            vec![1.0; 3]
        );
        let c = information_contribution(&Tensor::diag(&[3.0, 2.0, 1.0]), DEFAULT_RANK_REL_TOL)
            .unwrap();
        for (a, b) in c.iter().zip([3.0, 2.0, 1.0]) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn ics_matches_eigen_oracle() {
        let z = gaussian(6, 6, 4);
        let c = information_contribution(&z, DEFAULT_RANK_REL_TOL).unwrap();
        for (a, b) in c.iter().zip(ics_oracle(&z)) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn ics_total_mass_identity() {
        let z = gaussian(8, 7, 5);
        let res = svd(&z).unwrap();
        let c = information_contribution(&z, DEFAULT_RANK_REL_TOL).unwrap();
        let mass: f64 = (0..5)
            .map(|i| res.sigma[i] * (0..7).map(|x| res.u.get(x, i).abs()).sum::<f64>())
            .sum();
        assert!((c.iter().sum::<f64>() - mass).abs() <= 1e-9);
    }

    #[test]
    fn attention_score_uniform() {
        let seg = Segments::new(1, 3, 1);
        let l = seg.total();
        let attn = Tensor::new(vec![2, l, l], vec![1.0 / l as f64; 2 * l * l]).unwrap();
        let s = attention_score(&attn, &seq_of(seg), AttentionMeanMode::AllQueries).unwrap();
        assert!(s.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn attention_score_one_hot() {
        let seg = Segments::new(2, 3, 1);
        let l = seg.total();
        let mut data = vec![0.0; l * l];
        for q in 0..l {
            data[q * l + 2] = 1.0;
        }
        let attn = Tensor::new(vec![1, l, l], data).unwrap();
        let s = attention_score(&attn, &seq_of(seg), AttentionMeanMode::AllQueries).unwrap();
        assert_eq!(s, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn attention_score_hand_computed() {
        // H=2, L=4, L_s=1, L_v=2, L_p=1; columns 1 and 2 are visual.
        let h0 = [
            [1.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.0, 0.0],
            [0.2, 0.3, 0.5, 0.0],
            [0.1, 0.2, 0.3, 0.4],
        ];
        let h1 = [
            [1.0, 0.0, 0.0, 0.0],
            [0.25, 0.75, 0.0, 0.0],
            [0.4, 0.4, 0.2, 0.0],
            [0.25, 0.25, 0.25, 0.25],
        ];
        let data: Vec<f64> = h0.iter().chain(&h1).flatten().copied().collect();
        let attn = Tensor::new(vec![2, 4, 4], data).unwrap();
        let seq = seq_of(Segments::new(1, 2, 1));
        // Column 1: (0 + .5 + .3 + .2 + 0 + .75 + .4 + .25) / 8 = 2.4 / 8.
        // Column 2: (0 + 0 + .5 + .3 + 0 + 0 + .2 + .25) / 8 = 1.25 / 8.
        let all = attention_score(&attn, &seq, AttentionMeanMode::AllQueries).unwrap();
        assert!((all[0] - 2.4 / 8.0).abs() < 1e-15);
        assert!((all[1] - 1.25 / 8.0).abs() < 1e-15);
        // Unmasked: column 1 sees rows 1..4 (6 entries), column 2 rows 2..4 (4).
        let unmasked = attention_score(&attn, &seq, AttentionMeanMode::Unmasked).unwrap();
        assert!((unmasked[0] - 2.4 / 6.0).abs() < 1e-15);
        assert!((unmasked[1] - 1.25 / 4.0).abs() < 1e-15);
        // Visual queries: rows 1 and 2 only.
        let vis = attention_score(&attn, &seq, AttentionMeanMode::VisualQueries).unwrap();
        assert!((vis[0] - (0.5 + 0.3 + 0.75 + 0.4) / 4.0).abs() < 1e-15);
        assert!((vis[1] - (0.5 + 0.2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn attention_score_errors() {
        let seg = Segments::new(2, 0, 1);
        let attn = Tensor::zeros(&[1, 3, 3]);
        assert!(attention_score(&attn, &seq_of(seg), AttentionMeanMode::AllQueries).is_err());
        let attn = Tensor::zeros(&[1, 4, 4]);
        assert!(attention_score(&attn, &seq_of(seg), AttentionMeanMode::AllQueries).is_err());
    }

    #[test]
    fn combined_score_arithmetic() {
        let r = combined_score(&[1.0, 0.0, 0.5], &[0.0, 1.0, 0.5], 0.5).unwrap();
        assert_eq!(r.combined, vec![0.5, 0.5, 0.5]);
        let r = combined_score(&[2.0, 2.0], &[1.0, 3.0], 0.5).unwrap();
        assert!(r.normalization.ics.constant);
        assert_eq!(r.combined, vec![0.0, 0.5]);
        assert!(combined_score(&[1.0], &[1.0, 2.0], 0.5).is_err());
        assert!(combined_score(&[1.0], &[1.0], 1.5).is_err());
    }

    #[test]
    fn rank_examples() {
        let r = combined_score(&[0.1, 0.9, 0.5], &[0.0; 3], 0.0).unwrap();
        assert_eq!(rank_tokens(&r), vec![1, 2, 0]);
        assert_eq!(argsort_desc(&[0.4; 5]), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn rank_matches_reference_sort() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        // Coarse values force plenty of ties.
        let v: Vec<f64> = (0..50)
            .map(|_| f64::from(rng.random_range(0u8..10)) / 10.0)
            .collect();
        let mut pairs: Vec<(f64, usize)> = v.iter().copied().zip(0..).collect();
        // Insertion sort: stable by construction.
        for i in 1..pairs.len() {
            let mut j = i;
            while j > 0 && pairs[j - 1].0 < pairs[j].0 {
                pairs.swap(j - 1, j);
                j -= 1;
            }
        }
        let expected: Vec<usize> = pairs.into_iter().map(|p| p.1).collect();
        assert_eq!(argsort_desc(&v), expected);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn ics_properties(seed in 0u64..5000, rows in 2usize..12, cols in 2usize..9, scale in 0.1f64..10.0) {
            let z = gaussian(seed, rows, cols);
            let c = information_contribution(&z, DEFAULT_RANK_REL_TOL).unwrap();
            proptest::prop_assert!(c.iter().all(|v| *v >= 0.0));

            let mut perm: Vec<usize> = (0..rows).collect();
            perm.rotate_left(seed as usize % rows);
            let cp = information_contribution(&z.select_rows(&perm).unwrap(), DEFAULT_RANK_REL_TOL).unwrap();
            for (k, &p) in perm.iter().enumerate() {
                proptest::prop_assert!((cp[k] - c[p]).abs() <= 1e-9);
            }

            let cs = information_contribution(&z.scale(scale), DEFAULT_RANK_REL_TOL).unwrap();
            for (a, b) in cs.iter().zip(&c) {
                proptest::prop_assert!((a - scale * b).abs() <= 1e-9 * scale.max(1.0) * b.max(1.0));
            }
            proptest::prop_assert_eq!(argsort_desc(&cs), argsort_desc(&c));
        }

        #[test]
        fn lambda_extremes_preserve_ordering(seed in 0u64..5000, n in 2usize..40) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.1)).collect();
            let r0 = combined_score(&c, &s, 0.0).unwrap();
            let r1 = combined_score(&c, &s, 1.0).unwrap();
            proptest::prop_assert_eq!(rank_tokens(&r0), argsort_desc(&c));
            proptest::prop_assert_eq!(rank_tokens(&r1), argsort_desc(&s));
            proptest::prop_assert!(r0.combined.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
