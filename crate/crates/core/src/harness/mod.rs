//! Benchmarking and analysis around [`crate::carve`]: baseline strategies,
//! budget sweeps, ablation grids, curve normalization, KV-cache and FLOP
//! accounting, and wall-clock timing.

mod ablation;
mod sweep;
mod timing;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ablation::{
    ablation_grid, write_ablation_csv, AblationAxis, AblationRow, ABLATION_CSV_HEADER,
};
pub use sweep::{
    run_sweep, summarize, write_sweep_csv, BudgetSummary, Dominance, SkippedCell, SweepRecord,
    SweepResult, SweepSpec, SweepSummary, SWEEP_CSV_HEADER,
};
pub use timing::{time_carve, TimingReport};

use crate::carve::{CarveConfig, Selection};
use crate::error::{CarveError, Result};

/// Token-selection strategy compared by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Ipgs {
        lambda: f64,
        rho: f64,
    },
    /// Attention score only, no merging: `ipgs` with `lambda = 1, rho = 0`.
    AttentionOnly,
    /// Information score only, no merging: `ipgs` with `lambda = 0, rho = 0`.
    IcsOnly,
    /// Uniformly random survivors, no merging.
    Random {
        seed: u64,
    },
    /// No compression.
    None,
}

impl Strategy {
    /// Carve settings for this strategy at `budget`, or `None` for the
    /// uncompressed control.
    pub fn carve_config(
        &self,
        base: &CarveConfig,
        budget: usize,
    ) -> Option<(CarveConfig, Selection)> {
        let with = |lambda: f64, rho: f64| CarveConfig {
            target_count: budget,
            lambda,
            merge_proportion: rho,
            ..base.clone()
        };
        match *self {
            Self::Ipgs { lambda, rho } => Some((with(lambda, rho), Selection::Scored)),
            Self::AttentionOnly => Some((with(1.0, 0.0), Selection::Scored)),
            Self::IcsOnly => Some((with(0.0, 0.0), Selection::Scored)),
            Self::Random { seed } => Some((with(base.lambda, 0.0), Selection::Random { seed })),
            Self::None => None,
        }
    }

    /// Parses `ipgs`, `ipgs:<lambda>:<rho>`, `attention_only`, `ics_only`,
    /// `random`, `random:<seed>` or `none`. A bare `ipgs` takes `lambda` and
    /// `rho` from `base`.
    pub fn parse(s: &str, base: &CarveConfig) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| CarveError::Config(format!("bad number {v:?} in strategy {s:?}")))
        };
        match parts.as_slice() {
            ["ipgs"] => Ok(Self::Ipgs {
                lambda: base.lambda,
                rho: base.merge_proportion,
            }),
            ["ipgs", l, r] => Ok(Self::Ipgs {
                lambda: num(l)?,
                rho: num(r)?,
            }),
            ["attention_only" | "as"] => Ok(Self::AttentionOnly),
            ["ics_only" | "ics"] => Ok(Self::IcsOnly),
            ["random"] => Ok(Self::Random { seed: base.seed }),
            ["random", seed] => Ok(Self::Random {
                seed: seed
                    .parse()
                    .map_err(|_| CarveError::Config(format!("bad seed in strategy {s:?}")))?,
            }),
            ["none"] => Ok(Self::None),
            _ => Err(CarveError::Config(format!("unknown strategy {s:?}"))),
        }
    }

    pub fn parse_list(list: &str, base: &CarveConfig) -> Result<Vec<Self>> {
        list.split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| Self::parse(s, base))
            .collect()
    }

    pub fn is_attention_only(&self) -> bool {
        matches!(self, Self::AttentionOnly)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ipgs { lambda, rho } => write!(f, "ipgs:{lambda}:{rho}"),
            Self::AttentionOnly => f.write_str("attention_only"),
            Self::IcsOnly => f.write_str("ics_only"),
            Self::Random { seed } => write!(f, "random:{seed}"),
            Self::None => f.write_str("none"),
        }
    }
}

/// A curve mapped onto `[0, 1]` by its own min and max.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCurve {
    pub values: Vec<f64>,
    /// Set when the input was constant; `values` are then all zero.
    pub constant: bool,
}

/// `(v - min) / (max - min)` elementwise.
pub fn normalize_curve(values: &[f64]) -> Result<NormalizedCurve> {
    if values.len() < 2 {
        return Err(CarveError::Input(format!(
            "curve normalization needs at least 2 points, got {}",
            values.len()
        )));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(CarveError::Input(format!("non-finite curve value {bad}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == min {
        return Ok(NormalizedCurve {
            values: vec![0.0; values.len()],
            constant: true,
        });
    }
    Ok(NormalizedCurve {
        values: values.iter().map(|v| (v - min) / (max - min)).collect(),
        constant: false,
    })
}

/// Share of the uncompressed KV cache still needed: `(L_s + L_vc + L_p) / (L_s + L_v + L_p)`.
pub fn kv_cache_fraction(
    system: usize,
    kept_visual: usize,
    prompt: usize,
    visual: usize,
) -> Result<f64> {
    if kept_visual > visual {
        return Err(CarveError::Input(format!(
            "kept visual tokens {kept_visual} exceed {visual}"
        )));
    }
    let denom = system + visual + prompt;
    if denom == 0 {
        return Err(CarveError::Input("empty sequence has no KV cache".into()));
    }
    Ok((system + kept_visual + prompt) as f64 / denom as f64)
}

/// Analytic attention cost `2 H L^2 d_k` of one layer.
pub fn attention_flops(heads: usize, head_dim: usize, seq_len: usize) -> u64 {
    2 * (heads as u64) * (seq_len as u64).pow(2) * head_dim as u64
}

/// Attention cost of a prefill whose length drops from `full` to `carved`
/// after layer `carve_after` of `layers`.
pub fn prefill_attention_flops(
    heads: usize,
    head_dim: usize,
    layers: usize,
    carve_after: usize,
    full: usize,
    carved: usize,
) -> u64 {
    (1..=layers)
        .map(|l| {
            attention_flops(
                heads,
                head_dim,
                if l <= carve_after { full } else { carved },
            )
        })
        .sum()
}
