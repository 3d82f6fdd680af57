use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{kv_cache_fraction, prefill_attention_flops, Strategy};
use crate::attention::{
    extract_visual_slice, make_synthetic_input, InputSpec, ModelSpec, Prefill, ToyModel,
};
use crate::carve::{carve_with, CarveConfig};
use crate::error::{CarveError, Result};
use crate::linalg::{cosine, numerical_rank, Tensor};

pub const SWEEP_CSV_HEADER: &str =
    "strategy,budget,seed,rank_carve_layer,rank_final,surrogate,kv_fraction,flops,wall_ms";

/// What to sweep. Each seed replaces `input.seed`; the model stays fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub model: ModelSpec,
    pub input: InputSpec,
    pub carve: CarveConfig,
    pub strategies: Vec<Strategy>,
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Relative tolerance for the rank metrics.
    pub metric_rank_rel_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub strategy: String,
    pub budget: usize,
    pub seed: u64,
    pub rank_carve_layer: usize,
    pub rank_final: usize,
    pub surrogate: f64,
    pub kv_fraction: f64,
    pub flops: u64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub strategy: String,
    pub budget: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub budgets: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Ordered by strategy (as listed), then budget (as listed), then seed.
    pub records: Vec<SweepRecord>,
    pub skipped: Vec<SkippedCell>,
}

/// Uncompressed run for one input seed; shared by every cell with that seed.
pub(crate) struct Baseline {
    seq: crate::attention::TokenSequence,
    mean_visual: Vec<f64>,
    rank_carve_layer: usize,
    rank_final: usize,
}

fn mean_rows(m: &Tensor) -> Vec<f64> {
    let (r, c) = (m.rows(), m.cols());
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(m.row(i)) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= r.max(1) as f64);
    out
}

/// Cosine between the mean final visual hidden states of two runs.
pub(crate) fn surrogate_score(carved: &Prefill, baseline_mean: &[f64]) -> Result<f64> {
    let vis = carved.hidden.visual_embeddings()?;
    Ok(cosine(&mean_rows(&vis), baseline_mean).unwrap_or(0.0))
}

pub(crate) fn baseline(
    model: &ToyModel,
    input: &InputSpec,
    carve_layer: usize,
    tol: f64,
) -> Result<Baseline> {
    let seq = make_synthetic_input(input)?;
    let last = model.layer_count();
    let prefill = model.prefill(&seq, &BTreeSet::from([carve_layer, last]))?;
    let rank_of = |layer: usize| -> Result<usize> {
        numerical_rank(
            &extract_visual_slice(&prefill.artifacts[&layer].output, &seq)?,
            tol,
        )
    };
    Ok(Baseline {
        mean_visual: mean_rows(&prefill.hidden.visual_embeddings()?),
        rank_carve_layer: rank_of(carve_layer)?,
        rank_final: rank_of(last)?,
        seq,
    })
}

/// Runs one cell against a precomputed baseline.
pub(crate) fn evaluate_cell(
    model: &ToyModel,
    base: &Baseline,
    carve: &CarveConfig,
    strategy: &Strategy,
    budget: usize,
    tol: f64,
) -> Result<SweepRecord> {
    let spec = model.spec();
    let seg = base.seq.segments();
    let last = model.layer_count();
    let start = Instant::now();
    let record = match strategy.carve_config(carve, budget) {
        None => SweepRecord {
            strategy: strategy.to_string(),
            budget,
            seed: 0,
            rank_carve_layer: base.rank_carve_layer,
            rank_final: base.rank_final,
            surrogate: cosine(&base.mean_visual, &base.mean_visual).unwrap_or(0.0),
            kv_fraction: 1.0,
            flops: prefill_attention_flops(
                spec.heads,
                spec.head_dim(),
                last,
                last,
                seg.total(),
                seg.total(),
            ),
            wall_ms: 0.0,
        },
        Some((config, selection)) => {
            let out = carve_with(&base.seq, model, &config, selection, &BTreeSet::new())?;
            let carved = out.result.carved_seq();
            let final_z = extract_visual_slice(&out.prefill.artifacts[&last].output, carved)?;
            let carve_z = extract_visual_slice(&out.carve_layer.output, &base.seq)?
                .select_rows(&out.result.kept_visual_indices)?;
            SweepRecord {
                strategy: strategy.to_string(),
                budget,
                seed: 0,
                rank_carve_layer: numerical_rank(&carve_z, tol)?,
                rank_final: numerical_rank(&final_z, tol)?,
                surrogate: surrogate_score(&out.prefill, &base.mean_visual)?,
                kv_fraction: kv_cache_fraction(seg.system, budget, seg.prompt, seg.visual)?,
                flops: prefill_attention_flops(
                    spec.heads,
                    spec.head_dim(),
                    last,
                    config.carve_after_layer,
                    seg.total(),
                    carved.len(),
                ),
                wall_ms: 0.0,
            }
        }
    };
    Ok(SweepRecord {
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        ..record
    })
}

/// Runs every (strategy, budget, seed) cell. Cells run in parallel on the
/// current rayon pool; the output order is fixed regardless.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    let model = ToyModel::new(spec.model.clone())?;
    spec.carve.validate()?;
    if spec.input.dim != spec.model.dim {
        return Err(CarveError::Config(format!(
            "input dim {} != model dim {}",
            spec.input.dim, spec.model.dim
        )));
    }
    let tol = spec.metric_rank_rel_tol;
    let visual = spec.input.visual;

    let mut skipped = Vec::new();
    let mut cells = Vec::new();
    for strategy in &spec.strategies {
        for &budget in &spec.budgets {
            let feasible = match strategy.carve_config(&spec.carve, budget) {
                None => Ok(()),
                Some((cfg, _)) => cfg.validate_for(visual, model.layer_count()),
            };
            match feasible {
                Ok(()) => cells.extend(spec.seeds.iter().map(|&seed| (*strategy, budget, seed))),
                Err(e) => {
                    log::warn!("skipping {strategy} at budget {budget}: {e}");
                    skipped.push(SkippedCell {
                        strategy: strategy.to_string(),
                        budget,
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    let baselines: BTreeMap<u64, Baseline> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let input = InputSpec {
                seed,
                ..spec.input.clone()
            };
            baseline(&model, &input, spec.carve.carve_after_layer, tol).map(|b| (seed, b))
        })
        .collect::<Result<_>>()?;

    let records = cells
        .par_iter()
        .map(|(strategy, budget, seed)| {
            evaluate_cell(
                &model,
                &baselines[seed],
                &spec.carve,
                strategy,
                *budget,
                tol,
            )
            .map(|r| SweepRecord { seed: *seed, ..r })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        budgets: spec.budgets.clone(),
        seeds: spec.seeds.clone(),
        records,
        skipped,
    })
}

/// Writes the fixed-header CSV. With `include_timing = false` the wall-time
/// column is written as 0 so reruns compare byte-for-byte.
pub fn write_sweep_csv<W: Write>(
    out: &mut W,
    result: &SweepResult,
    include_timing: bool,
) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in &result.records {
        let wall = if include_timing { r.wall_ms } else { 0.0 };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{:.3}",
            r.strategy,
            r.budget,
            r.seed,
            r.rank_carve_layer,
            r.rank_final,
            r.surrogate,
            r.kv_fraction,
            r.flops,
            wall
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub strategy: String,
    pub budget: usize,
    pub runs: usize,
    pub mean_rank_final: f64,
    pub mean_rank_carve_layer: f64,
    pub mean_surrogate: f64,
    pub std_surrogate: f64,
    pub kv_fraction: f64,
}

/// Mean final-layer rank of one strategy against attention-only selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub strategy: String,
    pub budget: usize,
    pub mean_rank: f64,
    pub attention_only_mean_rank: f64,
    /// `mean_rank - attention_only_mean_rank`.
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub cells: Vec<BudgetSummary>,
    pub dominance: Vec<Dominance>,
    /// Per compared strategy: `>=` at every budget.
    pub dominates_everywhere: BTreeMap<String, bool>,
    /// Per compared strategy: number of budgets with a strict advantage.
    pub strictly_greater_budgets: BTreeMap<String, usize>,
    pub skipped: Vec<SkippedCell>,
}

pub fn summarize(result: &SweepResult) -> SweepSummary {
    let mut groups: Vec<((String, usize), Vec<&SweepRecord>)> = Vec::new();
    for r in &result.records {
        let key = (r.strategy.clone(), r.budget);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let cells: Vec<BudgetSummary> = groups
        .iter()
        .map(|((strategy, budget), rs)| {
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&SweepRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            let ms = mean(&|r| r.surrogate);
            let var = rs.iter().map(|r| (r.surrogate - ms).powi(2)).sum::<f64>() / n;
            BudgetSummary {
                strategy: strategy.clone(),
                budget: *budget,
                runs: rs.len(),
                mean_rank_final: mean(&|r| r.rank_final as f64),
                mean_rank_carve_layer: mean(&|r| r.rank_carve_layer as f64),
                mean_surrogate: ms,
                std_surrogate: var.sqrt(),
                kv_fraction: rs[0].kv_fraction,
            }
        })
        .collect();

    let reference = Strategy::AttentionOnly.to_string();
    let mut dominance = Vec::new();
    let mut dominates_everywhere = BTreeMap::new();
    let mut strictly_greater_budgets = BTreeMap::new();
    for c in cells.iter().filter(|c| c.strategy.starts_with("ipgs")) {
        let Some(att) = cells
            .iter()
            .find(|a| a.strategy == reference && a.budget == c.budget)
        else {
            continue;
        };
        let difference = c.mean_rank_final - att.mean_rank_final;
        let everywhere = dominates_everywhere
            .entry(c.strategy.clone())
            .or_insert(true);
        *everywhere &= difference >= 0.0;
        *strictly_greater_budgets
            .entry(c.strategy.clone())
            .or_insert(0) += usize::from(difference > 0.0);
        dominance.push(Dominance {
            strategy: c.strategy.clone(),
            budget: c.budget,
            mean_rank: c.mean_rank_final,
            attention_only_mean_rank: att.mean_rank_final,
            difference,
        });
    }
    SweepSummary {
        cells,
        dominance,
        dominates_everywhere,
        strictly_greater_budgets,
        skipped: result.skipped.clone(),
    }
}
