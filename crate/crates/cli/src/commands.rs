use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use carve_core::harness::{
    ablation_grid, kv_cache_fraction, prefill_attention_flops, run_sweep, summarize, time_carve,
    write_ablation_csv, write_sweep_csv, AblationAxis,
};
use carve_core::io::{encode_tensor, read_tensor, AblationConfig, DType, RunConfig};
use carve_core::{
    carve as run_carve, make_synthetic_input, numerical_rank, svd, CarveError, Result,
    TokenSequence, ToyModel,
};
use serde::Serialize;

use crate::staging::Staging;
use crate::Common;

/// Prefixes I/O failures with the offending path.
fn with_path(path: &Path) -> impl Fn(CarveError) -> CarveError + '_ {
    move |e| match e {
        CarveError::Io(io) => CarveError::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| with_path(path)(e.into()))?;
            serde_json::from_str(&text)?
        }
        None => RunConfig::default(),
    };
    Ok(cfg)
}

/// Applies `--seed` to the per-input seed and validates the result.
fn single_run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_config(common)?;
    if let Some(seed) = common.seed {
        cfg.input.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `--seed` by shifting the seed list so it starts at the given value.
fn multi_run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = load_config(common)?;
    if let Some(start) = common.seed {
        let first = cfg.sweep.seeds.first().copied().unwrap_or(0);
        cfg.sweep.seeds = cfg
            .sweep
            .seeds
            .iter()
            .map(|s| s.wrapping_sub(first).wrapping_add(start))
            .collect();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn tensor_bytes(t: &carve_core::Tensor) -> Vec<u8> {
    encode_tensor(t, DType::F64)
}

#[derive(Serialize)]
struct KeptIndices<'a> {
    kept_visual_indices: &'a [usize],
    stage1_kept: &'a [usize],
    set_a: &'a [usize],
    set_b: &'a [usize],
    merge_map: &'a [carve_core::carve::MergeEdge],
    token_sizes: &'a [usize],
    position_ids: Vec<usize>,
}

#[derive(Serialize)]
struct CarveMetrics {
    visual_tokens: usize,
    kept: usize,
    intermediate: usize,
    merges: usize,
    carve_after_layer: usize,
    kv_fraction: f64,
    flops_carved: u64,
    flops_baseline: u64,
    rank_carve_layer: usize,
    rank_final: usize,
    rank_final_baseline: usize,
    metric_rank_rel_tol: f64,
    surrogate: f64,
}

fn load_input(cfg: &RunConfig, path: Option<&Path>) -> Result<TokenSequence> {
    match path {
        None => make_synthetic_input(&cfg.input),
        Some(p) => {
            let t = read_tensor(p).map_err(with_path(p))?;
            let seg = cfg.input.segments();
            if t.dims() != [seg.total(), cfg.model.dim] {
                return Err(CarveError::Input(format!(
                    "input tensor {:?} does not match {} tokens x {} dims from the config",
                    t.dims(),
                    seg.total(),
                    cfg.model.dim
                )));
            }
            TokenSequence::new(t, seg)
        }
    }
}

fn mean_rows(t: &carve_core::Tensor) -> Vec<f64> {
    let mut out = vec![0.0; t.cols()];
    for i in 0..t.rows() {
        out.iter_mut().zip(t.row(i)).for_each(|(o, v)| *o += v);
    }
    out.iter_mut().for_each(|v| *v /= t.rows().max(1) as f64);
    out
}

pub fn carve(common: &Common, input: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = single_run_config(common)?;
    let model = ToyModel::new(cfg.model.clone())?;
    let seq = load_input(&cfg, input)?;
    let layers = model.layer_count();
    let tol = cfg.sweep.metric_rank_rel_tol;

    let output = run_carve(&seq, &model, &cfg.carve)?;
    let baseline = model.prefill(&seq, &BTreeSet::from([layers]))?;
    let result = &output.result;
    let carved = result.carved_seq();

    let carved_visual = result.apply_to(&seq.visual_embeddings()?)?;
    let final_visual = carve_core::attention::extract_visual_slice(
        &output.prefill.artifacts[&layers].output,
        carved,
    )?;
    let carve_visual =
        carve_core::attention::extract_visual_slice(&output.carve_layer.output, &seq)?
            .select_rows(&result.kept_visual_indices)?;
    let base_visual =
        carve_core::attention::extract_visual_slice(&baseline.artifacts[&layers].output, &seq)?;
    let surrogate = carve_core::linalg::cosine(
        &mean_rows(&output.prefill.hidden.visual_embeddings()?),
        &mean_rows(&baseline.hidden.visual_embeddings()?),
    )
    .unwrap_or(0.0);

    let seg = seq.segments();
    let spec = model.spec();
    let metrics = CarveMetrics {
        visual_tokens: seg.visual,
        kept: result.kept_visual_indices.len(),
        intermediate: result.budget.intermediate,
        merges: result.budget.merges,
        carve_after_layer: cfg.carve.carve_after_layer,
        kv_fraction: kv_cache_fraction(
            seg.system,
            result.kept_visual_indices.len(),
            seg.prompt,
            seg.visual,
        )?,
        flops_carved: prefill_attention_flops(
            spec.heads,
            spec.head_dim(),
            layers,
            cfg.carve.carve_after_layer,
            seq.len(),
            carved.len(),
        ),
        flops_baseline: prefill_attention_flops(
            spec.heads,
            spec.head_dim(),
            layers,
            layers,
            seq.len(),
            seq.len(),
        ),
        rank_carve_layer: numerical_rank(&carve_visual, tol)?,
        rank_final: numerical_rank(&final_visual, tol)?,
        rank_final_baseline: numerical_rank(&base_visual, tol)?,
        metric_rank_rel_tol: tol,
        surrogate,
    };
    let kept = KeptIndices {
        kept_visual_indices: &result.kept_visual_indices,
        stage1_kept: &result.stage1_kept,
        set_a: &result.set_a,
        set_b: &result.set_b,
        merge_map: &result.merge_map,
        token_sizes: &result.token_sizes,
        position_ids: carved.visual_position_ids().to_vec(),
    };

    let mut staging = Staging::new(out)?;
    staging.write("carved_visual.ctns", &tensor_bytes(&carved_visual))?;
    staging.write("carved_hidden.ctns", &tensor_bytes(carved.embeddings()))?;
    staging.write(
        "final_hidden.ctns",
        &tensor_bytes(output.prefill.hidden.embeddings()),
    )?;
    staging.write_json("kept_indices.json", &kept)?;
    staging.write_json("score_report.json", &result.score_report)?;
    staging.write_json("metrics.json", &metrics)?;
    for p in staging.commit()? {
        log::info!("wrote {}", p.display());
    }
    Ok(())
}

fn sweep_csv(result: &carve_core::SweepResult) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, result, false)?;
    Ok(buf)
}

pub fn sweep(
    common: &Common,
    strategies: Option<&str>,
    budgets: Option<Vec<usize>>,
    out: &Path,
) -> Result<()> {
    let mut cfg = multi_run_config(common)?;
    if let Some(list) = strategies {
        cfg.sweep.strategies = list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
    }
    if let Some(b) = budgets {
        cfg.sweep.budgets = b;
    }
    cfg.validate()?;
    let spec = cfg.sweep_spec()?;
    let result = run_sweep(&spec)?;

    let mut staging = Staging::new(out)?;
    staging.write("sweep.csv", &sweep_csv(&result)?)?;
    staging.write_json("summary.json", &summarize(&result))?;
    let mut timed = Vec::new();
    write_sweep_csv(&mut timed, &result, true)?;
    staging.write("sweep_timed.csv", &timed)?;

    if let Some(ab) = &cfg.sweep.ablation {
        let rows = ablation_grid(
            &cfg.model,
            &cfg.input,
            &cfg.carve,
            ab.axis,
            &ab.points,
            &cfg.sweep.seeds,
            cfg.sweep.metric_rank_rel_tol,
        )?;
        let mut buf = Vec::new();
        write_ablation_csv(&mut buf, &rows)?;
        staging.write("ablation.csv", &buf)?;
    }
    if let Some(reps) = cfg.sweep.timing_repetitions {
        let model = ToyModel::new(cfg.model.clone())?;
        let seq = make_synthetic_input(&cfg.input)?;
        staging.write_json("timing.json", &time_carve(&model, &seq, &cfg.carve, reps)?)?;
    }
    staging.commit()?;
    Ok(())
}

pub fn ablate(
    common: &Common,
    axis: Option<AblationAxis>,
    points: Option<Vec<f64>>,
    out: &Path,
) -> Result<()> {
    let cfg = multi_run_config(common)?;
    let configured = cfg.sweep.ablation.clone().unwrap_or(AblationConfig {
        axis: AblationAxis::Rho,
        points: vec![0.0, 0.25, 0.5, 0.75],
    });
    let axis = axis.unwrap_or(configured.axis);
    let points = points.unwrap_or(configured.points);
    let rows = ablation_grid(
        &cfg.model,
        &cfg.input,
        &cfg.carve,
        axis,
        &points,
        &cfg.sweep.seeds,
        cfg.sweep.metric_rank_rel_tol,
    )?;
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &rows)?;
    let mut staging = Staging::new(out)?;
    staging.write("ablation.csv", &buf)?;
    staging.commit()?;
    Ok(())
}

#[derive(Serialize)]
struct RankReport {
    dims: Vec<usize>,
    tol: f64,
    rank: usize,
    singular_values: Vec<f64>,
}

pub fn rank(path: &Path, tol: f64) -> Result<()> {
    let t = read_tensor(path).map_err(with_path(path))?;
    let rank = numerical_rank(&t, tol)?;
    let report = RankReport {
        dims: t.dims().to_vec(),
        tol,
        rank,
        singular_values: svd(&t)?.sigma,
    };
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

#[derive(Serialize)]
struct SequenceMeta<'a> {
    segments: carve_core::Segments,
    position_ids: &'a [usize],
    input: &'a carve_core::InputSpec,
}

pub fn gen(common: &Common, out: &Path) -> Result<()> {
    let cfg = single_run_config(common)?;
    let seq = make_synthetic_input(&cfg.input)?;
    let mut staging = Staging::new(out)?;
    staging.write("sequence.ctns", &tensor_bytes(seq.embeddings()))?;
    staging.write("visual.ctns", &tensor_bytes(&seq.visual_embeddings()?))?;
    staging.write_json(
        "sequence.json",
        &SequenceMeta {
            segments: seq.segments(),
            position_ids: seq.position_ids(),
            input: &cfg.input,
        },
    )?;
    staging.commit()?;
    Ok(())
}
