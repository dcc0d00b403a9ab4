//! Central-difference gradient check on a tiny model, shared by test targets.
#![allow(dead_code)]

use icegen::model::{backward, CeMask, ModelConfig, ModelParams, Objective, WindowPhysics};
use icegen::physics::LossWeights;
use icegen::tokenizer::TokenId;

pub const EPS: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
/// Entries whose gradient is this small on both sides are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

pub fn tiny_config(dropout: f64) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_heads: 2,
        n_layers: 1,
        d_ff: 16,
        vocab_size: 24,
        max_len: 6,
        dropout,
    }
}

pub fn levels() -> Vec<f64> {
    (0..16).map(|i| (i as f64 + 0.5) / 16.0).collect()
}

pub fn objective(levels: &[f64], weights: LossWeights, mask: CeMask) -> Objective<'_> {
    Objective {
        n_channels: 2,
        power_levels: levels,
        ce_mask: mask,
        weights,
        ramp_up: 0.01,
        ramp_down: 0.015,
    }
}

// power tokens 0..16, wind tokens 16..24, three steps
pub const TOKENS: [TokenId; 6] = [12, 19, 3, 22, 14, 17];

pub fn active_physics() -> WindowPhysics {
    // caps below the expected power keep the hinge active at every step
    WindowPhysics {
        caps: vec![0.2, 0.1, 0.15],
    }
}

/// Compares every analytic gradient entry with a central difference.
/// Returns the number of entries checked, or the first mismatch.
pub fn check_gradients(
    params: &ModelParams,
    obj: &Objective<'_>,
    phys: &WindowPhysics,
    dropout_seed: Option<u64>,
) -> Result<usize, String> {
    let (_, grads) =
        backward(params, &TOKENS, phys, obj, dropout_seed).map_err(|e| e.to_string())?;
    let loss = |p: &ModelParams| {
        backward(p, &TOKENS, phys, obj, dropout_seed)
            .unwrap()
            .0
            .total
    };
    let names: Vec<String> = grads.tensors().into_iter().map(|(n, _)| n).collect();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.to_vec())
        .collect();
    let mut checked = 0;
    for (k, name) in names.iter().enumerate() {
        for i in 0..analytic[k].len() {
            let mut plus = params.clone();
            plus.weights.tensors_mut()[k][i] += EPS;
            let mut minus = params.clone();
            minus.weights.tensors_mut()[k][i] -= EPS;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
            let a = analytic[k][i];
            let scale = a.abs().max(numeric.abs());
            let ok = if scale < ABS_FLOOR {
                (a - numeric).abs() < ABS_FLOOR
            } else {
                (a - numeric).abs() <= REL_TOL * scale
            };
            if !ok {
                return Err(format!(
                    "{name}[{i}]: analytic {a:e} vs numeric {numeric:e}"
                ));
            }
            checked += 1;
        }
    }
    Ok(checked)
}
