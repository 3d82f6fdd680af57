//! Training-free two-stage visual-token compression on a toy attention prefill.
//!
//! A sequence `[system | visual | prompt]` runs through the first layers of a
//! small rotary-attention stack. At the carve layer every visual token gets an
//! information-contribution score (from the SVD of the visual slice of the
//! attention output) and an attention score (mean attention it receives).
//! Stage I keeps the best `L_vc (1 + rho)` tokens by the blended score;
//! Stage II splits the survivors into a higher-scored and a lower-scored half
//! and averages the `L_vc rho` most redundant low-half tokens into their most
//! similar high-half partners. The remaining layers then run on the shorter
//! sequence with the survivors' original position ids.
//!
//! Modules:
//! - [`linalg`]: dense matrices, SVD, numerical rank.
//! - [`attention`]: rotary attention stack, prefill, synthetic inputs.
//! - [`ipgs`]: per-token scores and ranking.
//! - [`carve`]: the two-stage pipeline.
//! - [`harness`]: sweeps, baselines, ablations, KV/FLOP accounting, timing.
//! - [`io`]: binary tensor files and JSON run configs.

pub mod attention;
pub mod carve;
pub mod error;
pub mod harness;
pub mod io;
pub mod ipgs;
pub mod linalg;

pub use attention::{
    make_synthetic_input, InputSpec, LayerArtifacts, ModelSpec, Prefill, RopeParams, Segments,
    TokenSequence, ToyModel, VisualLayout,
};
pub use carve::{carve, CarveConfig, CarveOutput, CarveResult};
pub use error::{CarveError, ErrorKind, Result};
pub use harness::{Strategy, SweepResult};
pub use ipgs::{AttentionMeanMode, ScoreReport};
pub use linalg::{numerical_rank, svd, SvdResult, Tensor};
