use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sweep::{baseline, evaluate_cell};
use super::Strategy;
use crate::attention::{InputSpec, ModelSpec, ToyModel};
use crate::carve::CarveConfig;
use crate::error::{CarveError, Result};

pub const ABLATION_CSV_HEADER: &str = "axis,value,seed,rank_carve_layer,rank_final,surrogate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Lambda,
    Rho,
}

impl AblationAxis {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Lambda => "lambda",
            Self::Rho => "rho",
        }
    }

    fn check(&self, value: f64) -> Result<()> {
        let ok = match self {
            Self::Lambda => (0.0..=1.0).contains(&value),
            Self::Rho => (0.0..1.0).contains(&value),
        };
        if ok {
            Ok(())
        } else {
            Err(CarveError::Config(format!(
                "{} grid point {value} out of range",
                self.name()
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: AblationAxis,
    pub value: f64,
    pub seed: u64,
    pub rank_carve_layer: usize,
    pub rank_final: usize,
    pub surrogate: f64,
}

/// Varies one knob of `carve` over `points` while everything else stays
/// fixed, one row per (point, seed).
pub fn ablation_grid(
    model: &ModelSpec,
    input: &InputSpec,
    carve: &CarveConfig,
    axis: AblationAxis,
    points: &[f64],
    seeds: &[u64],
    metric_rank_rel_tol: f64,
) -> Result<Vec<AblationRow>> {
    points.iter().try_for_each(|p| axis.check(*p))?;
    let toy = ToyModel::new(model.clone())?;
    let baselines: BTreeMap<u64, _> = seeds
        .par_iter()
        .map(|&seed| {
            let input = InputSpec {
                seed,
                ..input.clone()
            };
            baseline(&toy, &input, carve.carve_after_layer, metric_rank_rel_tol).map(|b| (seed, b))
        })
        .collect::<Result<_>>()?;

    let cells: Vec<(f64, u64)> = points
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    cells
        .par_iter()
        .map(|&(value, seed)| {
            let strategy = match axis {
                AblationAxis::Lambda => Strategy::Ipgs {
                    lambda: value,
                    rho: carve.merge_proportion,
                },
                AblationAxis::Rho => Strategy::Ipgs {
                    lambda: carve.lambda,
                    rho: value,
                },
            };
            let r = evaluate_cell(
                &toy,
                &baselines[&seed],
                carve,
                &strategy,
                carve.target_count,
                metric_rank_rel_tol,
            )?;
            Ok(AblationRow {
                axis,
                value,
                seed,
                rank_carve_layer: r.rank_carve_layer,
                rank_final: r.rank_final,
                surrogate: r.surrogate,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(out: &mut W, rows: &[AblationRow]) -> std::io::Result<()> {
    writeln!(out, "{ABLATION_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.axis.name(),
            r.value,
            r.seed,
            r.rank_carve_layer,
            r.rank_final,
            r.surrogate
        )?;
    }
    Ok(())
}
