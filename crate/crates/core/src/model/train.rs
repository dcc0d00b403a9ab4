use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{backward, forward_cached, LossParts, Objective, WindowPhysics};
use super::{ModelParams, Weights};
use crate::error::{Error, Result};
use crate::power_curve::PhysicsEnvelope;
use crate::provenance::derive_seed;
use crate::tokenizer::{TokenId, TokenSequence, TokenizerSpec};

/// One teacher-forced training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// First step index in the source sequence.
    pub start: usize,
    pub tokens: Vec<TokenId>,
    pub physics: WindowPhysics,
}

/// Normalized cap for every step, from the de-quantized wind token.
pub fn step_caps(
    seq: &TokenSequence,
    spec: &TokenizerSpec,
    env: &PhysicsEnvelope,
) -> Result<Vec<f64>> {
    let slot = spec.wind_slot();
    (0..seq.steps())
        .map(|t| Ok(env.cap(spec.decode_slot(slot, seq.step(t)[slot])?) / env.rated_kw))
        .collect()
}

/// Windows of `steps` consecutive steps lying inside one of `runs`, started
/// every `stride` steps.
pub fn training_windows(
    seq: &TokenSequence,
    caps: &[f64],
    runs: &[Range<usize>],
    steps: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if steps < 2 || stride == 0 {
        return Err(Error::Validation(format!(
            "window of {steps} steps with stride {stride}"
        )));
    }
    if caps.len() != seq.steps() {
        return Err(Error::Shape(format!(
            "{} caps for {} steps",
            caps.len(),
            seq.steps()
        )));
    }
    let mut out = Vec::new();
    for run in runs {
        let mut start = run.start;
        while start + steps <= run.end {
            out.push(Window {
                start,
                tokens: seq.window(start..start + steps).tokens,
                physics: WindowPhysics {
                    caps: caps[start..start + steps].to_vec(),
                },
            });
            start += stride;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.adam_eps > 0.0
            && self.clip_norm > 0.0;
        if !ok {
            return Err(Error::Validation(format!(
                "invalid optimizer settings: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train: LossParts,
    pub val: Option<LossParts>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

fn accumulate(sum: &mut LossParts, p: &LossParts) {
    sum.total += p.total;
    sum.ce += p.ce;
    sum.cap += p.cap;
    sum.ramp += p.ramp;
    sum.tv += p.tv;
    sum.ce_targets += p.ce_targets;
}

fn mean_parts(sum: LossParts, n: usize) -> LossParts {
    let k = 1.0 / n.max(1) as f64;
    LossParts {
        total: sum.total * k,
        ce: sum.ce * k,
        cap: sum.cap * k,
        ramp: sum.ramp * k,
        tv: sum.tv * k,
        ce_targets: sum.ce_targets,
    }
}

/// Mean loss components over `windows`, without dropout.
pub fn evaluate_windows(
    params: &ModelParams,
    windows: &[Window],
    objective: &Objective<'_>,
) -> Result<LossParts> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let parts: Vec<LossParts> = windows
        .par_iter()
        .map(|w| {
            let cache = forward_cached(params, &w.tokens, None)?;
            Ok(objective.evaluate(&cache.logits, &w.tokens, &w.physics)?.0)
        })
        .collect::<Result<_>>()?;
    let mut sum = LossParts::default();
    parts.iter().for_each(|p| accumulate(&mut sum, p));
    Ok(mean_parts(sum, parts.len()))
}

struct Adam {
    m: Weights,
    v: Weights,
    step: i32,
}

impl Adam {
    fn update(&mut self, params: &mut Weights, grads: &Weights, cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((p, (m, v)), (_, g)) in tensors.map(|((p, m), v)| (p, (m, v))).zip(grads.tensors()) {
            for i in 0..p.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p[i] -= cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Adam with global-norm clipping over shuffled mini-batches. Per-window
/// gradients are computed in parallel and summed in window order, so the
/// result does not depend on the thread count. Returns the parameters of
/// the epoch with the lowest validation loss (training loss without
/// validation windows).
pub fn train(
    params: ModelParams,
    train_windows: &[Window],
    val_windows: &[Window],
    objective: &Objective<'_>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    objective.weights.validate()?;
    if train_windows.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()));
    }
    let mut params = params;
    let mut adam = Adam {
        m: Weights::zeros(&params.config),
        v: Weights::zeros(&params.config),
        step: 0,
    };
    let mut history: Vec<EpochStats> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Weights)> = None;
    let mut order: Vec<usize> = (0..train_windows.len()).collect();
    let trace = |h: &[EpochStats]| {
        h.iter()
            .map(|e| format!("{:.4}", e.train.total))
            .collect::<Vec<_>>()
            .join(",")
    };

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &format!("shuffle/{epoch}")));
        order.shuffle(&mut rng);
        let mut sum = LossParts::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(LossParts, Weights)> = batch
                .par_iter()
                .map(|&i| {
                    let seed = derive_seed(cfg.seed, &format!("dropout/{epoch}/{b}/{i}"));
                    let w = &train_windows[i];
                    backward(&params, &w.tokens, &w.physics, objective, Some(seed))
                })
                .collect::<Result<_>>()
                .map_err(|e| match e {
                    Error::Training { location, message } => Error::training(
                        format!("epoch {epoch} batch {b}: {location}"),
                        format!("{message}; loss trace [{}]", trace(&history)),
                    ),
                    other => other,
                })?;
            let mut grads = Weights::zeros(&params.config);
            for (parts, g) in &results {
                accumulate(&mut sum, parts);
                grads.add_assign(g);
            }
            grads.scale(1.0 / results.len() as f64);
            let norm = grads.norm();
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            adam.update(&mut params.weights, &grads, cfg);
            if let Some(name) = params.weights.first_non_finite() {
                return Err(Error::training(
                    format!("epoch {epoch} batch {b}: update/{name}"),
                    format!("parameters diverged; loss trace [{}]", trace(&history)),
                ));
            }
        }
        let train_parts = mean_parts(sum, train_windows.len());
        let val = if val_windows.is_empty() {
            None
        } else {
            Some(evaluate_windows(&params, val_windows, objective)?)
        };
        let score = val.map_or(train_parts.total, |v| v.total);
        if !score.is_finite() {
            return Err(Error::training(
                format!("epoch {epoch}"),
                format!("non-finite loss; trace [{}]", trace(&history)),
            ));
        }
        log::info!(
            "epoch {epoch}: train {:.4} (ce {:.4}) val {}",
            train_parts.total,
            train_parts.ce,
            val.map_or("-".to_string(), |v| format!(
                "{:.4} (ce {:.4})",
                v.total, v.ce
            ))
        );
        history.push(EpochStats {
            epoch,
            train: train_parts,
            val,
        });
        if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
            best = Some((score, epoch, params.weights.clone()));
        }
    }
    let (_, best_epoch, weights) = best.expect("at least one epoch");
    params.weights = weights;
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CeMask, ModelConfig};
    use crate::physics::LossWeights;

    fn objective(levels: &[f64]) -> Objective<'_> {
        Objective {
            n_channels: 2,
            power_levels: levels,
            ce_mask: CeMask::AllChannels,
            weights: LossWeights::ZERO,
            ramp_up: 0.05,
            ramp_down: 0.05,
        }
    }

    fn tiny(seed: u64) -> ModelParams {
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            vocab_size: 24,
            max_len: 16,
            dropout: 0.0,
        };
        ModelParams::init(cfg, seed).unwrap()
    }

    #[test]
    fn windows_stay_inside_runs() {
        let seq = TokenSequence::new(2, (0..40).map(|i| i as TokenId % 24).collect()).unwrap();
        let caps = vec![1.0; 20];
        let w = training_windows(&seq, &caps, &[0..7, 10..20], 4, 2).unwrap();
        let starts: Vec<usize> = w.iter().map(|w| w.start).collect();
        assert_eq!(starts, vec![0, 2, 10, 12, 14, 16]);
        assert_eq!(
            w[1].tokens,
            (4..12).map(|i| i as TokenId).collect::<Vec<_>>()
        );
    }

    #[test]
    fn memorizes_a_repeated_window() {
        let levels: Vec<f64> = (0..16).map(|i| (i as f64 + 0.5) / 16.0).collect();
        let obj = objective(&levels);
        let tokens: Vec<TokenId> = vec![3, 17, 9, 20, 12, 16, 5, 23];
        let w = Window {
            start: 0,
            tokens,
            physics: WindowPhysics { caps: vec![1.0; 4] },
        };
        let cfg = TrainConfig {
            epochs: 500,
            batch_size: 1,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        };
        let out = train(tiny(3), std::slice::from_ref(&w), &[], &obj, &cfg).unwrap();
        let last = out.history.last().unwrap().train.ce;
        assert!(last < 0.1, "final ce {last}");
    }

    #[test]
    fn fixed_seed_reproduces_trace() {
        let levels: Vec<f64> = (0..16).map(|i| (i as f64 + 0.5) / 16.0).collect();
        let obj = objective(&levels);
        let windows: Vec<Window> = (0..5)
            .map(|k| Window {
                start: k,
                tokens: (0..8).map(|i| ((i * 7 + k * 3) % 24) as TokenId).collect(),
                physics: WindowPhysics { caps: vec![0.5; 4] },
            })
            .collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(tiny(1), &windows, &windows[..2], &obj, &cfg).unwrap();
        let b = train(tiny(1), &windows, &windows[..2], &obj, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn rejects_bad_settings() {
        let levels = vec![0.5; 16];
        let obj = objective(&levels);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(tiny(0), &[], &[], &obj, &cfg),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            train(tiny(0), &[], &[], &obj, &TrainConfig::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
