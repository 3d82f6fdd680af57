//! Seeded synthetic multimodal inputs with a controllable visual rank.
//!
//! The visual segment is `F G + noise * N` with `F: L_v x r`, `G: r x d`, so
//! its noiseless rank is exactly `r` (almost surely). System and prompt
//! tokens are i.i.d. standard normal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::sequence::{Segments, TokenSequence};
use crate::error::{CarveError, Result};
use crate::linalg::{matmul, Tensor};

/// How the left factor `F` of the visual segment is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisualLayout {
    /// Every entry of `F` is standard normal.
    Gaussian,
    /// Tokens are split into `r` contiguous runs ("regions"); each token
    /// loads mainly on its region's component with a random amplitude, plus
    /// a small spill onto the others. Neighbouring tokens are therefore
    /// near-duplicates, as with patches of a flat image area.
    #[default]
    Regions,
}

fn default_system() -> usize {
    4
}
fn default_visual() -> usize {
    64
}
fn default_prompt() -> usize {
    8
}
fn default_dim() -> usize {
    64
}
fn default_rank() -> usize {
    12
}
fn default_noise() -> f64 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    #[serde(default = "default_system")]
    pub system: usize,
    #[serde(default = "default_visual")]
    pub visual: usize,
    #[serde(default = "default_prompt")]
    pub prompt: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_rank")]
    pub effective_rank: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub layout: VisualLayout,
    #[serde(default)]
    pub seed: u64,
}

impl Default for InputSpec {
    fn default() -> Self {
        Self {
            system: default_system(),
            visual: default_visual(),
            prompt: default_prompt(),
            dim: default_dim(),
            effective_rank: default_rank(),
            noise: default_noise(),
            layout: VisualLayout::default(),
            seed: 0,
        }
    }
}

impl InputSpec {
    pub fn segments(&self) -> Segments {
        Segments::new(self.system, self.visual, self.prompt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(CarveError::Config("input dim must be positive".into()));
        }
        if self.effective_rank > self.visual.min(self.dim) {
            return Err(CarveError::Config(format!(
                "effective rank {} exceeds min(L_v = {}, d = {})",
                self.effective_rank, self.visual, self.dim
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(CarveError::Config(format!(
                "noise must be finite and >= 0, got {}",
                self.noise
            )));
        }
        Ok(())
    }
}

const REGION_SPILL: f64 = 0.05;

pub fn make_synthetic_input(spec: &InputSpec) -> Result<TokenSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.dim;
    let normal = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    };

    let system = normal(&mut rng, spec.system * d);
    let visual = visual_segment(&mut rng, spec)?;
    let prompt = normal(&mut rng, spec.prompt * d);

    let mut data = system;
    data.extend_from_slice(visual.data());
    data.extend(prompt);
    let embeddings = Tensor::new(vec![spec.segments().total(), d], data)?;
    TokenSequence::new(embeddings, spec.segments())
}

fn visual_segment(rng: &mut ChaCha8Rng, spec: &InputSpec) -> Result<Tensor> {
    let (lv, d, r) = (spec.visual, spec.dim, spec.effective_rank);
    let mut out = if r == 0 {
        Tensor::zeros(&[lv, d])
    } else {
        let f = match spec.layout {
            VisualLayout::Gaussian => {
                let data = (0..lv * r).map(|_| rng.sample(StandardNormal)).collect();
                Tensor::new(vec![lv, r], data)?
            }
            VisualLayout::Regions => {
                let mut data = vec![0.0; lv * r];
                for t in 0..lv {
                    let region = t * r / lv;
                    let amplitude: f64 = rng.random_range(0.5..1.5);
                    for c in 0..r {
                        let spill: f64 = rng.sample(StandardNormal);
                        data[t * r + c] = if c == region {
                            amplitude
                        } else {
                            REGION_SPILL * spill
                        };
                    }
                }
                Tensor::new(vec![lv, r], data)?
            }
        };
        // Unit-variance entries for G rows keep token norms near sqrt(d).
        let g_scale = match spec.layout {
            VisualLayout::Gaussian => 1.0 / (r as f64).sqrt(),
            VisualLayout::Regions => 1.0,
        };
        let g_data = (0..r * d)
            .map(|_| g_scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        matmul(&f, &Tensor::new(vec![r, d], g_data)?)?
    };
    if spec.noise > 0.0 {
        for i in 0..lv {
            for v in out.row_mut(i) {
                *v += spec.noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(out)
}
