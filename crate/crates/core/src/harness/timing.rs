use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::prefill_attention_flops;
use crate::attention::{TokenSequence, ToyModel};
use crate::carve::{carve, CarveConfig};
use crate::error::{CarveError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub repetitions: usize,
    pub carved_mean_ms: f64,
    pub carved_std_ms: f64,
    pub baseline_mean_ms: f64,
    pub baseline_std_ms: f64,
    /// `baseline_mean / carved_mean`.
    pub speedup: f64,
    pub flops_carved: u64,
    pub flops_baseline: u64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Wall-clock comparison of a carved prefill against the plain prefill on
/// the same input. Runs are interleaved and serial; one warm-up of each is
/// discarded.
pub fn time_carve(
    model: &ToyModel,
    seq: &TokenSequence,
    config: &CarveConfig,
    repetitions: usize,
) -> Result<TimingReport> {
    if repetitions < 3 {
        return Err(CarveError::Config(format!(
            "timing needs at least 3 repetitions, got {repetitions}"
        )));
    }
    let none = BTreeSet::new();
    let mut carved_len = 0;
    carve(seq, model, config)?;
    model.prefill(seq, &none)?;

    let (mut carved, mut plain) = (Vec::new(), Vec::new());
    for _ in 0..repetitions {
        let t = Instant::now();
        let out = carve(seq, model, config)?;
        carved.push(t.elapsed().as_secs_f64() * 1e3);
        carved_len = out.result.carved_seq().len();

        let t = Instant::now();
        model.prefill(seq, &none)?;
        plain.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let (cm, cs) = mean_std(&carved);
    let (bm, bs) = mean_std(&plain);
    let spec = model.spec();
    let layers = model.layer_count();
    Ok(TimingReport {
        repetitions,
        carved_mean_ms: cm,
        carved_std_ms: cs,
        baseline_mean_ms: bm,
        baseline_std_ms: bs,
        speedup: bm / cm,
        flops_carved: prefill_attention_flops(
            spec.heads,
            spec.head_dim(),
            layers,
            config.carve_after_layer,
            seq.len(),
            carved_len,
        ),
        flops_baseline: prefill_attention_flops(
            spec.heads,
            spec.head_dim(),
            layers,
            layers,
            seq.len(),
            seq.len(),
        ),
    })
}
