//! Toy rotary-attention prefill that produces the per-layer attention maps
//! and attention outputs consumed by the scorers.

mod model;
mod rope;
mod sequence;
mod synthetic;

pub use model::{attention_layer, LayerArtifacts, LayerWeights, ModelSpec, Prefill, ToyModel};
pub use rope::{apply_rope, RopeParams};
pub use sequence::{extract_visual_slice, Segments, TokenSequence};
pub use synthetic::{make_synthetic_input, InputSpec, VisualLayout};
