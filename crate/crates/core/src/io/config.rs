use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{InputSpec, ModelSpec};
use crate::carve::CarveConfig;
use crate::error::{CarveError, Result};
use crate::harness::{AblationAxis, Strategy, SweepSpec};

/// Rank tolerance used by sweep metrics. Sits above the default synthetic
/// noise floor so near-duplicate tokens are not counted as extra rank.
pub const DEFAULT_METRIC_RANK_REL_TOL: f64 = 1e-2;

/// Top-level JSON run configuration. Every section and field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub input: InputSpec,
    pub carve: CarveConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Strategy strings as accepted by [`Strategy::parse`].
    pub strategies: Vec<String>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    pub metric_rank_rel_tol: f64,
    pub ablation: Option<AblationConfig>,
    /// Wall-clock repetitions; timing is skipped when absent.
    pub timing_repetitions: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            strategies: vec!["ipgs".into(), "attention_only".into()],
            budgets: vec![8, 16, 24, 32],
            seeds: (0..30).collect(),
            metric_rank_rel_tol: DEFAULT_METRIC_RANK_REL_TOL,
            ablation: None,
            timing_repetitions: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    pub points: Vec<f64>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Checks each section and the links between them.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.input.validate()?;
        self.carve.validate()?;
        if self.input.dim != self.model.dim {
            return Err(CarveError::Config(format!(
                "input.dim {} does not match model.dim {}",
                self.input.dim, self.model.dim
            )));
        }
        self.carve
            .validate_for(self.input.visual, self.model.layers)?;
        let s = &self.sweep;
        if !(s.metric_rank_rel_tol > 0.0 && s.metric_rank_rel_tol < 1.0) {
            return Err(CarveError::Config(format!(
                "sweep.metric_rank_rel_tol must be in (0, 1), got {}",
                s.metric_rank_rel_tol
            )));
        }
        if let Some(r) = s.timing_repetitions {
            if r < 3 {
                return Err(CarveError::Config(format!(
                    "sweep.timing_repetitions must be at least 3, got {r}"
                )));
            }
        }
        self.strategies()?;
        Ok(())
    }

    pub fn strategies(&self) -> Result<Vec<Strategy>> {
        self.sweep
            .strategies
            .iter()
            .map(|s| Strategy::parse(s, &self.carve))
            .collect()
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        Ok(SweepSpec {
            model: self.model.clone(),
            input: self.input.clone(),
            carve: self.carve.clone(),
            strategies: self.strategies()?,
            budgets: self.sweep.budgets.clone(),
            seeds: self.sweep.seeds.clone(),
            metric_rank_rel_tol: self.sweep.metric_rank_rel_tol,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ErrorKind;

    #[test]
    fn empty_object_is_all_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg =
            RunConfig::from_json(r#"{"carve": {"target_count": 8}, "sweep": {"budgets": [4]}}"#)
                .unwrap();
        assert_eq!(cfg.carve.target_count, 8);
        assert_eq!(cfg.carve.lambda, CarveConfig::default().lambda);
        assert_eq!(cfg.sweep.budgets, vec![4]);
        assert_eq!(cfg.sweep.seeds.len(), 30);
    }

    #[test]
    fn unknown_fields_are_config_errors() {
        for text in [
            r#"{"modle": {}}"#,
            r#"{"carve": {"lamda": 0.5}}"#,
            r#"{"sweep": {"x": 1}}"#,
        ] {
            assert_eq!(
                RunConfig::from_json(text).unwrap_err().kind(),
                ErrorKind::Config,
                "{text}"
            );
        }
    }

    #[test]
    fn cross_section_checks() {
        let e = RunConfig::from_json(r#"{"input": {"dim": 32}}"#).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let e = RunConfig::from_json(r#"{"sweep": {"strategies": ["fastv"]}}"#).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
        let e = RunConfig::from_json(r#"{"sweep": {"timing_repetitions": 2}}"#).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Config);
    }

    #[test]
    fn json_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.sweep.ablation = Some(AblationConfig {
            axis: AblationAxis::Rho,
            points: vec![0.0, 0.5],
        });
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }
}
