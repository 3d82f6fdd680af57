//! The two-stage compression pipeline mounted inside the toy prefill.

mod config;
mod merge;

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{Budget, CarveConfig};
pub use merge::{
    apply_merges, partition_sets, similarity_matrix, stage2_merge, MergeEdge, Merged, Similarity,
};

use crate::attention::{extract_visual_slice, LayerArtifacts, Prefill, TokenSequence, ToyModel};
use crate::error::{CarveError, Result};
use crate::ipgs::{
    argsort_desc, attention_score, combined_score, information_contribution, ScoreReport,
};
use crate::linalg::Tensor;

/// How Stage I picks its survivors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Top-k by combined score.
    #[default]
    Scored,
    /// Uniformly random k-subset; scores are still reported.
    Random { seed: u64 },
}

/// Bookkeeping of one carve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarveResult {
    /// Hidden states at the carve layer after compression:
    /// `L_s + L_vc + L_p` rows with the survivors' original position ids.
    #[serde(skip)]
    pub carved_seq: Option<TokenSequence>,
    /// Original visual indices of the surviving tokens, ascending.
    pub kept_visual_indices: Vec<usize>,
    /// Stage-I survivors, ascending.
    pub stage1_kept: Vec<usize>,
    pub set_a: Vec<usize>,
    pub set_b: Vec<usize>,
    /// Merges in application order.
    pub merge_map: Vec<MergeEdge>,
    /// Member count of each surviving token, aligned with `kept_visual_indices`.
    pub token_sizes: Vec<usize>,
    /// `None` when the budget keeps every visual token and nothing was scored.
    pub score_report: Option<ScoreReport>,
    pub budget: Budget,
}

impl CarveResult {
    pub fn carved_seq(&self) -> &TokenSequence {
        self.carved_seq
            .as_ref()
            .expect("carved sequence is populated by carve()")
    }

    /// Visual indices removed in Stage I.
    pub fn pruned_indices(&self, visual: usize) -> Vec<usize> {
        let kept: BTreeSet<usize> = self.stage1_kept.iter().copied().collect();
        (0..visual).filter(|i| !kept.contains(i)).collect()
    }

    /// Replays the selection and merges on any per-visual-token matrix.
    pub fn apply_to(&self, per_token: &Tensor) -> Result<Tensor> {
        Ok(apply_merges(per_token, &self.stage1_kept, &self.merge_map)?.rows)
    }
}

/// Everything one carve run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct CarveOutput {
    pub result: CarveResult,
    /// Final hidden states of the compressed run and the artifacts of the
    /// last layer (plus any extra layers requested).
    pub prefill: Prefill,
    /// Attention artifacts captured at the carve layer, before compression.
    pub carve_layer: LayerArtifacts,
}

/// Stage I: score every visual token and keep the top
/// `round_half_up(L_vc (1 + rho))`, returned in original order.
pub fn stage1_prune(
    seq: &TokenSequence,
    artifacts: &LayerArtifacts,
    config: &CarveConfig,
) -> Result<(Vec<usize>, ScoreReport)> {
    stage1_with(seq, artifacts, config, Selection::Scored)
}

fn score(
    seq: &TokenSequence,
    artifacts: &LayerArtifacts,
    config: &CarveConfig,
) -> Result<ScoreReport> {
    let z_visual = extract_visual_slice(&artifacts.output, seq)?;
    let ics = information_contribution(&z_visual, config.rank_rel_tol)?;
    let attn = attention_score(&artifacts.attn, seq, config.attention_mean)?;
    combined_score(&ics, &attn, config.lambda)
}

fn stage1_with(
    seq: &TokenSequence,
    artifacts: &LayerArtifacts,
    config: &CarveConfig,
    selection: Selection,
) -> Result<(Vec<usize>, ScoreReport)> {
    let visual = seq.segments().visual;
    config.validate()?;
    if !config.is_feasible(visual) {
        return Err(CarveError::Config(format!(
            "budget L_vc = {}, rho = {} is infeasible for {visual} visual tokens",
            config.target_count, config.merge_proportion
        )));
    }
    let report = score(seq, artifacts, config)?;
    let k = config.budget().intermediate;
    let mut kept: Vec<usize> = match selection {
        Selection::Scored => argsort_desc(&report.combined).into_iter().take(k).collect(),
        Selection::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample(&mut rng, visual, k).into_vec()
        }
    };
    kept.sort_unstable();
    Ok((kept, report))
}

/// Runs layers `1..=c`, compresses the visual segment, then runs the rest.
pub fn carve(seq: &TokenSequence, model: &ToyModel, config: &CarveConfig) -> Result<CarveOutput> {
    carve_with(seq, model, config, Selection::Scored, &BTreeSet::new())
}

/// [`carve`] with an explicit Stage-I selection rule and extra post-carve
/// layers to capture.
pub fn carve_with(
    seq: &TokenSequence,
    model: &ToyModel,
    config: &CarveConfig,
    selection: Selection,
    extra_capture: &BTreeSet<usize>,
) -> Result<CarveOutput> {
    let layers = model.layer_count();
    let seg = seq.segments();
    config.validate_for(seg.visual, layers)?;
    let c = config.carve_after_layer;

    let (state, mut captured) = model.run_layers(seq, 1..=c, &BTreeSet::from([c]))?;
    let carve_layer = captured.remove(&c).expect("carve layer was captured");

    let budget = config.budget();
    let (stage1_kept, report, set_a, set_b) = if config.target_count == seg.visual {
        // Identity budget: nothing is pruned or merged, so skip scoring.
        ((0..seg.visual).collect(), None, Vec::new(), Vec::new())
    } else {
        let (kept, report) = stage1_with(&state, &carve_layer, config, selection)?;
        let (a, b) = partition_sets(&kept, &report);
        (kept, Some(report), a, b)
    };

    let merge_map = if budget.merges > 0 {
        let z_visual = extract_visual_slice(&carve_layer.output, &state)?;
        let sim = similarity_matrix(
            &z_visual.select_rows(&set_b)?,
            &z_visual.select_rows(&set_a)?,
        )?;
        stage2_merge(&set_a, &set_b, &sim, budget.merges)?
    } else {
        Vec::new()
    };

    let merged = apply_merges(&state.visual_embeddings()?, &stage1_kept, &merge_map)?;
    debug_assert_eq!(merged.survivors.len(), config.target_count);
    let carved_seq = reassemble(&state, &merged)?;

    let mut capture = extra_capture.clone();
    capture.insert(layers);
    let (after, artifacts) = model.run_layers(&carved_seq, c + 1..=layers, &capture)?;
    let hidden = model.final_block(&after)?;

    Ok(CarveOutput {
        result: CarveResult {
            carved_seq: Some(carved_seq),
            kept_visual_indices: merged.survivors,
            stage1_kept,
            set_a,
            set_b,
            merge_map,
            token_sizes: merged.sizes,
            score_report: report,
            budget,
        },
        prefill: Prefill { hidden, artifacts },
        carve_layer,
    })
}

/// `[system | merged visual | prompt]` with original position ids.
fn reassemble(state: &TokenSequence, merged: &Merged) -> Result<TokenSequence> {
    let seg = state.segments();
    let emb = state.embeddings();
    let system = emb.slice_rows(0, seg.system)?;
    let prompt = emb.slice_rows(seg.system + seg.visual, seg.total())?;
    let embeddings = Tensor::vstack(&[&system, &merged.rows, &prompt])?;

    let pos = state.position_ids();
    let visual_pos = state.visual_position_ids();
    let mut position_ids = pos[..seg.system].to_vec();
    position_ids.extend(merged.survivors.iter().map(|&i| visual_pos[i]));
    position_ids.extend_from_slice(&pos[seg.system + seg.visual..]);

    let segments = crate::attention::Segments::new(seg.system, merged.survivors.len(), seg.prompt);
    TokenSequence::with_positions(embeddings, segments, position_ids)
}
