//! Shared fixtures for the benchmarks.

use carve_core::{make_synthetic_input, InputSpec, ModelSpec, TokenSequence, ToyModel};

/// Default toy model with a synthetic input of `visual` tokens.
pub fn fixture(visual: usize) -> (ToyModel, TokenSequence) {
    let model = ToyModel::new(ModelSpec::default()).expect("default model spec is valid");
    let input = InputSpec {
        visual,
        ..InputSpec::default()
    };
    let seq = make_synthetic_input(&input).expect("fixture input spec is valid");
    (model, seq)
}
