use serde::{Deserialize, Serialize};

use crate::error::{CarveError, Result};
use crate::linalg::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeParams {
    pub head_dim: usize,
    pub base: f64,
}

impl RopeParams {
    pub const DEFAULT_BASE: f64 = 10_000.0;

    pub fn new(head_dim: usize, base: f64) -> Result<Self> {
        let p = Self { head_dim, base };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim == 0 || !self.head_dim.is_multiple_of(2) {
            return Err(CarveError::Config(format!(
                "rotary head dim must be even and positive, got {}",
                self.head_dim
            )));
        }
        if !(self.base.is_finite() && self.base > 0.0) {
            return Err(CarveError::Config(format!(
                "rotary base must be positive, got {}",
                self.base
            )));
        }
        Ok(())
    }

    /// Rotation frequency for the pair `(2j, 2j + 1)`.
    pub fn inv_freq(&self, j: usize) -> f64 {
        self.base.powf(-2.0 * j as f64 / self.head_dim as f64)
    }
}

/// Rotates each row of an `L x d_k` matrix pairwise by `pos * base^(-2j/d_k)`.
pub fn apply_rope(x: &Tensor, position_ids: &[usize], params: &RopeParams) -> Result<Tensor> {
    params.validate()?;
    let (rows, cols) = x.shape2()?;
    if cols != params.head_dim {
        return Err(CarveError::shape(
            "apply_rope",
            format!("row width {cols} != head dim {}", params.head_dim),
        ));
    }
    if position_ids.len() != rows {
        return Err(CarveError::shape(
            "apply_rope",
            format!("{} positions for {rows} rows", position_ids.len()),
        ));
    }
    let half = cols / 2;
    let freqs: Vec<f64> = (0..half).map(|j| params.inv_freq(j)).collect();
    let mut out = x.data().to_vec();
    for (row, &pos) in out.chunks_mut(cols).zip(position_ids) {
        rotate_row(row, pos, &freqs);
    }
    Ok(Tensor::from_parts(vec![rows, cols], out))
}

pub(crate) fn rotate_row(row: &mut [f64], pos: usize, freqs: &[f64]) {
    if pos == 0 {
        return;
    }
    for (j, f) in freqs.iter().enumerate() {
        let (sin, cos) = (pos as f64 * f).sin_cos();
        let (a, b) = (row[2 * j], row[2 * j + 1]);
        row[2 * j] = a * cos - b * sin;
        row[2 * j + 1] = a * sin + b * cos;
    }
}
