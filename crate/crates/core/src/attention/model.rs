use std::collections::{BTreeMap, BTreeSet};
use std::ops::RangeInclusive;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::rope::{rotate_row, RopeParams};
use super::sequence::TokenSequence;
use crate::error::{CarveError, Result};
use crate::linalg::{dot, matmul, softmax_in_place, Tensor};

fn default_layers() -> usize {
    4
}
fn default_heads() -> usize {
    4
}
fn default_dim() -> usize {
    64
}
fn default_ffn_dim() -> usize {
    128
}
fn default_rope_base() -> f64 {
    RopeParams::DEFAULT_BASE
}
fn default_init_scale() -> f64 {
    1.0
}
fn default_causal() -> bool {
    true
}

/// Shape and seed of a [`ToyModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_ffn_dim")]
    pub ffn_dim: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
    /// Projection weights are drawn from `N(0, (init_scale^2) / fan_in)`.
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_causal")]
    pub causal: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            heads: default_heads(),
            dim: default_dim(),
            ffn_dim: default_ffn_dim(),
            rope_base: default_rope_base(),
            init_scale: default_init_scale(),
            causal: default_causal(),
            seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 || self.ffn_dim == 0 {
            return Err(CarveError::Config(
                "model layers, heads, dim and ffn_dim must be positive".into(),
            ));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(CarveError::Config(format!(
                "model dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(CarveError::Config(
                "init_scale must be finite and >= 0".into(),
            ));
        }
        self.rope()?;
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn rope(&self) -> Result<RopeParams> {
        RopeParams::new(self.dim / self.heads.max(1), self.rope_base)
    }
}

/// Per-layer projections, each `d x d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

/// Attention map and attention output captured at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerArtifacts {
    /// `H x L x L`.
    pub attn: Tensor,
    /// `L x d`, the per-head `A V` products concatenated along columns.
    pub output: Tensor,
}

impl LayerArtifacts {
    pub fn heads(&self) -> usize {
        self.attn.dims()[0]
    }

    pub fn seq_len(&self) -> usize {
        self.attn.dims()[1]
    }

    /// `L x L` attention averaged over heads.
    pub fn head_mean(&self) -> Tensor {
        let (h, l) = (self.heads(), self.seq_len());
        let mut out = vec![0.0; l * l];
        for head in self.attn.data().chunks(l * l) {
            for (o, a) in out.iter_mut().zip(head) {
                *o += a;
            }
        }
        out.iter_mut().for_each(|v| *v /= h as f64);
        Tensor::from_parts(vec![l, l], out)
    }
}

/// Decoder-only attention stack with a final feed-forward block.
///
/// Each layer computes `x + concat_h(A_h V_h) W_O` with rotary queries and
/// keys. There is no layer norm; the residual stream is carried as-is.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    spec: ModelSpec,
    layers: Vec<LayerWeights>,
    ffn_in: Tensor,
    ffn_out: Tensor,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

impl ToyModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let d = spec.dim;
        let std = spec.init_scale / (d as f64).sqrt();
        let layers = (0..spec.layers)
            .map(|_| LayerWeights {
                w_q: gaussian_matrix(&mut rng, d, d, std),
                w_k: gaussian_matrix(&mut rng, d, d, std),
                w_v: gaussian_matrix(&mut rng, d, d, std),
                w_o: gaussian_matrix(&mut rng, d, d, std),
            })
            .collect();
        let ffn_in = gaussian_matrix(&mut rng, d, spec.ffn_dim, std);
        let ffn_out = gaussian_matrix(
            &mut rng,
            spec.ffn_dim,
            d,
            spec.init_scale / (spec.ffn_dim as f64).sqrt(),
        );
        Ok(Self {
            spec,
            layers,
            ffn_in,
            ffn_out,
        })
    }

    /// Builds a model from explicit weights; used by tests and diagnostics.
    pub fn from_weights(
        spec: ModelSpec,
        layers: Vec<LayerWeights>,
        ffn_in: Tensor,
        ffn_out: Tensor,
    ) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim;
        if layers.len() != spec.layers {
            return Err(CarveError::Config(format!(
                "{} layer weight sets for a {}-layer model",
                layers.len(),
                spec.layers
            )));
        }
        for w in &layers {
            for t in [&w.w_q, &w.w_k, &w.w_v, &w.w_o] {
                if t.dims() != [d, d] {
                    return Err(CarveError::shape(
                        "ToyModel::from_weights",
                        "projection must be d x d",
                    ));
                }
            }
        }
        if ffn_in.dims() != [d, spec.ffn_dim] || ffn_out.dims() != [spec.ffn_dim, d] {
            return Err(CarveError::shape(
                "ToyModel::from_weights",
                "feed-forward shape",
            ));
        }
        Ok(Self {
            spec,
            layers,
            ffn_in,
            ffn_out,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Weights of layer `index` (1-based).
    pub fn layer(&self, index: usize) -> Option<&LayerWeights> {
        index.checked_sub(1).and_then(|i| self.layers.get(i))
    }

    pub fn ffn(&self) -> (&Tensor, &Tensor) {
        (&self.ffn_in, &self.ffn_out)
    }

    pub fn rope(&self) -> RopeParams {
        // Validated at construction.
        RopeParams {
            head_dim: self.spec.head_dim(),
            base: self.spec.rope_base,
        }
    }

    /// Runs layers in `range` (1-based, inclusive), capturing the requested ones.
    pub fn run_layers(
        &self,
        seq: &TokenSequence,
        range: RangeInclusive<usize>,
        capture: &BTreeSet<usize>,
    ) -> Result<(TokenSequence, BTreeMap<usize, LayerArtifacts>)> {
        if seq.is_empty() {
            return Err(CarveError::Input("empty token sequence".into()));
        }
        if seq.dim() != self.spec.dim {
            return Err(CarveError::shape(
                "run_layers",
                format!(
                    "embedding width {} != model dim {}",
                    seq.dim(),
                    self.spec.dim
                ),
            ));
        }
        let rope = self.rope();
        let mut current = seq.clone();
        let mut captured = BTreeMap::new();
        for index in range {
            let weights = self.layer(index).ok_or_else(|| {
                CarveError::Config(format!("layer {index} outside 1..={}", self.layers.len()))
            })?;
            let (artifacts, next) = attention_layer(&current, weights, &rope, self.spec.causal)?;
            if capture.contains(&index) {
                captured.insert(index, artifacts);
            }
            current = next;
        }
        Ok((current, captured))
    }

    /// `x + relu(x W_in) W_out`, applied once after the last layer.
    pub fn final_block(&self, seq: &TokenSequence) -> Result<TokenSequence> {
        let x = seq.embeddings();
        let mut hidden = matmul(x, &self.ffn_in)?;
        let (rows, cols) = hidden.shape2()?;
        for i in 0..rows {
            for v in hidden.row_mut(i) {
                *v = v.max(0.0);
            }
        }
        debug_assert_eq!(cols, self.spec.ffn_dim);
        let out = x.add(&matmul(&hidden, &self.ffn_out)?)?;
        Ok(seq.replace_embeddings(out))
    }

    /// Full forward pass over every layer followed by the final block.
    pub fn prefill(&self, seq: &TokenSequence, capture: &BTreeSet<usize>) -> Result<Prefill> {
        let l = self.layers.len();
        if let Some(bad) = capture.iter().find(|&&c| c == 0 || c > l) {
            return Err(CarveError::Config(format!(
                "capture layer {bad} outside 1..={l}"
            )));
        }
        let (seq, artifacts) = self.run_layers(seq, 1..=l, capture)?;
        Ok(Prefill {
            hidden: self.final_block(&seq)?,
            artifacts,
        })
    }
}

/// Output of a prefill pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prefill {
    /// Final hidden states, one row per token.
    pub hidden: TokenSequence,
    /// Captured layers keyed by 1-based index.
    pub artifacts: BTreeMap<usize, LayerArtifacts>,
}

/// One rotary multi-head self-attention layer with a residual connection.
pub fn attention_layer(
    seq: &TokenSequence,
    weights: &LayerWeights,
    params: &RopeParams,
    causal: bool,
) -> Result<(LayerArtifacts, TokenSequence)> {
    params.validate()?;
    let x = seq.embeddings();
    let (l, d) = x.shape2()?;
    if l == 0 {
        return Err(CarveError::Input("empty token sequence".into()));
    }
    let dk = params.head_dim;
    if d % dk != 0 || weights.w_q.dims() != [d, d] {
        return Err(CarveError::shape(
            "attention_layer",
            format!("embedding width {d} incompatible with head dim {dk} / weights"),
        ));
    }
    let heads = d / dk;
    let q = matmul(x, &weights.w_q)?;
    let k = matmul(x, &weights.w_k)?;
    let v = matmul(x, &weights.w_v)?;
    let positions = seq.position_ids();
    let freqs: Vec<f64> = (0..dk / 2).map(|j| params.inv_freq(j)).collect();
    let scale = 1.0 / (dk as f64).sqrt();

    let per_head: Vec<(Vec<f64>, Vec<f64>)> = (0..heads)
        .into_par_iter()
        .map(|h| {
            let cols = h * dk..(h + 1) * dk;
            let rotated = |m: &Tensor| -> Vec<Vec<f64>> {
                (0..l)
                    .map(|i| {
                        let mut r = m.row(i)[cols.clone()].to_vec();
                        rotate_row(&mut r, positions[i], &freqs);
                        r
                    })
                    .collect()
            };
            let (qh, kh) = (rotated(&q), rotated(&k));
            let mut attn = vec![0.0; l * l];
            for i in 0..l {
                let row = &mut attn[i * l..(i + 1) * l];
                for j in 0..l {
                    row[j] = if causal && j > i {
                        f64::NEG_INFINITY
                    } else {
                        dot(&qh[i], &kh[j]) * scale
                    };
                }
                softmax_in_place(row);
            }
            let mut z = vec![0.0; l * dk];
            for i in 0..l {
                let zr = &mut z[i * dk..(i + 1) * dk];
                for j in 0..l {
                    let a = attn[i * l + j];
                    if a == 0.0 {
                        continue;
                    }
                    for (o, vv) in zr.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += a * vv;
                    }
                }
            }
            (attn, z)
        })
        .collect();

    let mut attn = Vec::with_capacity(heads * l * l);
    let mut z = vec![0.0; l * d];
    for (h, (a, zh)) in per_head.into_iter().enumerate() {
        attn.extend(a);
        for i in 0..l {
            z[i * d + h * dk..i * d + (h + 1) * dk].copy_from_slice(&zh[i * dk..(i + 1) * dk]);
        }
    }
    let output = Tensor::from_parts(vec![l, d], z);
    let updated = x.add(&matmul(&output, &weights.w_o)?)?;
    Ok((
        LayerArtifacts {
            attn: Tensor::from_parts(vec![heads, l, l], attn),
            output,
        },
        seq.replace_embeddings(updated),
    ))
}
