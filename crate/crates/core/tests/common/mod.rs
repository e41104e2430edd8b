#![allow(dead_code)]

use std::collections::BTreeMap;

use layersplice::splice::{build_plan, MethodChoice, Scope, SplicePlan};
use layersplice::toy::{generate_toy_checkpoint_as, ToyModelConfig};
use layersplice::{Checkpoint, Dtype, InterpolationMethod, ScheduleParams};

pub fn small_config(num_layers: usize) -> ToyModelConfig {
    ToyModelConfig {
        num_layers,
        hidden_size: 16,
        num_heads: 2,
        intermediate_size: 40,
        vocab_size: 32,
        ..Default::default()
    }
}

pub fn toy(num_layers: usize, seed: u64, dtype: Dtype) -> Checkpoint {
    generate_toy_checkpoint_as(&small_config(num_layers), seed, dtype).unwrap()
}

pub fn plan(
    n: usize,
    positions: &[usize],
    method: InterpolationMethod,
    overrides: &[(usize, f64)],
) -> SplicePlan {
    let overrides: BTreeMap<usize, f64> = overrides.iter().copied().collect();
    build_plan(
        positions,
        &MethodChoice::Uniform(method),
        &overrides,
        ScheduleParams::with_defaults(n).unwrap(),
        Scope::PerTensor,
    )
    .unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)`, zero when both vanish.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
