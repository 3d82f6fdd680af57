use serde::{Deserialize, Serialize};

use crate::error::{CarveError, Result};
use crate::linalg::Tensor;

/// Lengths of the system, visual and prompt segments, in sequence order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segments {
    pub system: usize,
    pub visual: usize,
    pub prompt: usize,
}

impl Segments {
    pub fn new(system: usize, visual: usize, prompt: usize) -> Self {
        Self {
            system,
            visual,
            prompt,
        }
    }

    pub fn total(&self) -> usize {
        self.system + self.visual + self.prompt
    }

    pub fn visual_range(&self) -> std::ops::Range<usize> {
        self.system..self.system + self.visual
    }
}

/// `[system | visual | prompt]` embeddings with their position ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    embeddings: Tensor,
    segments: Segments,
    position_ids: Vec<usize>,
}

impl TokenSequence {
    /// Positions default to `0..L`.
    pub fn new(embeddings: Tensor, segments: Segments) -> Result<Self> {
        let n = embeddings.rows();
        Self::with_positions(embeddings, segments, (0..n).collect())
    }

    pub fn with_positions(
        embeddings: Tensor,
        segments: Segments,
        position_ids: Vec<usize>,
    ) -> Result<Self> {
        let (rows, _) = embeddings.shape2()?;
        if segments.total() != rows {
            return Err(CarveError::Input(format!(
                "segments {segments:?} sum to {} but embeddings have {rows} rows",
                segments.total()
            )));
        }
        if position_ids.len() != rows {
            return Err(CarveError::Input(format!(
                "{} position ids for {rows} tokens",
                position_ids.len()
            )));
        }
        if position_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CarveError::Input(
                "position ids must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            embeddings,
            segments,
            position_ids,
        })
    }

    pub(crate) fn replace_embeddings(&self, embeddings: Tensor) -> Self {
        debug_assert_eq!(embeddings.dims(), self.embeddings.dims());
        Self {
            embeddings,
            segments: self.segments,
            position_ids: self.position_ids.clone(),
        }
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn segments(&self) -> Segments {
        self.segments
    }

    pub fn position_ids(&self) -> &[usize] {
        &self.position_ids
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    /// Same tokens with every position id moved by `shift`.
    pub fn shifted(&self, shift: usize) -> Self {
        Self {
            embeddings: self.embeddings.clone(),
            segments: self.segments,
            position_ids: self.position_ids.iter().map(|p| p + shift).collect(),
        }
    }

    pub fn visual_embeddings(&self) -> Result<Tensor> {
        let r = self.segments.visual_range();
        self.embeddings.slice_rows(r.start, r.end)
    }

    pub fn visual_position_ids(&self) -> &[usize] {
        &self.position_ids[self.segments.visual_range()]
    }
}

/// Rows `L_s .. L_s + L_v` of a per-token matrix aligned with `seq`.
pub fn extract_visual_slice(z: &Tensor, seq: &TokenSequence) -> Result<Tensor> {
    let (rows, _) = z.shape2()?;
    if rows != seq.len() {
        return Err(CarveError::shape(
            "extract_visual_slice",
            format!("{rows} rows for a {}-token sequence", seq.len()),
        ));
    }
    let seg = seq.segments();
    if seg.visual == 0 {
        return Err(CarveError::Input("sequence has no visual tokens".into()));
    }
    let r = seg.visual_range();
    z.slice_rows(r.start, r.end)
}
