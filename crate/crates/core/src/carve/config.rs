use serde::{Deserialize, Serialize};

use crate::error::{CarveError, Result};
use crate::ipgs::AttentionMeanMode;
use crate::linalg::DEFAULT_RANK_REL_TOL;

fn default_target() -> usize {
    16
}
fn default_rho() -> f64 {
    0.5
}
fn default_lambda() -> f64 {
    0.5
}
fn default_carve_layer() -> usize {
    2
}
fn default_rank_tol() -> f64 {
    DEFAULT_RANK_REL_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarveConfig {
    /// Final number of visual tokens, `L_vc`.
    #[serde(default = "default_target")]
    pub target_count: usize,
    /// Merge proportion `rho` in `[0, 1)`.
    #[serde(default = "default_rho")]
    pub merge_proportion: f64,
    /// Weight of the attention score against the information score.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    /// Compression runs after this (1-based) layer.
    #[serde(default = "default_carve_layer")]
    pub carve_after_layer: usize,
    /// Relative singular-value cutoff for the rank used by the information score.
    #[serde(default = "default_rank_tol")]
    pub rank_rel_tol: f64,
    #[serde(default)]
    pub attention_mean: AttentionMeanMode,
    #[serde(default)]
    pub seed: u64,
}

impl Default for CarveConfig {
    fn default() -> Self {
        Self {
            target_count: default_target(),
            merge_proportion: default_rho(),
            lambda: default_lambda(),
            carve_after_layer: default_carve_layer(),
            rank_rel_tol: default_rank_tol(),
            attention_mean: AttentionMeanMode::default(),
            seed: 0,
        }
    }
}

/// Integer token counts for the two stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    /// Stage-I survivors, `round_half_up(L_vc (1 + rho))`.
    pub intermediate: usize,
    /// Stage-II merges, `intermediate - L_vc`.
    pub merges: usize,
}

pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

impl CarveConfig {
    pub fn identity(visual: usize) -> Self {
        Self {
            target_count: visual,
            merge_proportion: 0.0,
            ..Self::default()
        }
    }

    /// Stage budgets. The merge count is `k - L_vc` so the final count is
    /// always exactly `L_vc`, whatever `round_half_up(L_vc rho)` would give.
    pub fn budget(&self) -> Budget {
        let intermediate = round_half_up(self.target_count as f64 * (1.0 + self.merge_proportion))
            .max(self.target_count);
        Budget {
            intermediate,
            merges: intermediate - self.target_count,
        }
    }

    /// Checks the knobs alone, independent of any input.
    pub fn validate(&self) -> Result<()> {
        if self.target_count == 0 {
            return Err(CarveError::Config("target_count must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.merge_proportion) {
            return Err(CarveError::Config(format!(
                "merge_proportion must lie in [0, 1), got {}",
                self.merge_proportion
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(CarveError::Config(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        if !(self.rank_rel_tol > 0.0 && self.rank_rel_tol < 1.0) {
            return Err(CarveError::Config(format!(
                "rank_rel_tol must lie in (0, 1), got {}",
                self.rank_rel_tol
            )));
        }
        if self.carve_after_layer == 0 {
            return Err(CarveError::Config("carve_after_layer is 1-based".into()));
        }
        Ok(())
    }

    /// Checks the budget against a visual segment and a model depth.
    pub fn validate_for(&self, visual: usize, layers: usize) -> Result<()> {
        self.validate()?;
        let needed = (self.target_count as f64 * (1.0 + self.merge_proportion)).ceil() as usize;
        if needed > visual {
            return Err(CarveError::Config(format!(
                "intermediate budget ceil({} * (1 + {})) = {needed} exceeds {visual} visual tokens",
                self.target_count, self.merge_proportion
            )));
        }
        if self.carve_after_layer >= layers {
            return Err(CarveError::Config(format!(
                "carve_after_layer {} must leave at least one of {layers} layers after it",
                self.carve_after_layer
            )));
        }
        Ok(())
    }

    pub fn is_feasible(&self, visual: usize) -> bool {
        self.validate().is_ok()
            && (self.target_count as f64 * (1.0 + self.merge_proportion)).ceil() as usize <= visual
    }
}
