//! Causal decoder-only Transformer over the flattened token stream.
//!
//! Pre-norm blocks (masked multi-head self-attention, GELU feed-forward),
//! sinusoidal positional encodings, a final layer norm and an output
//! projection onto the shared vocabulary. Gradients are hand-derived
//! reverse-mode and checked against central differences in the tests.

mod checkpoint;
mod forward;
mod incremental;
mod train;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use forward::{
    backward, forward, forward_cached, loss_ce, CeMask, ForwardCache, LossParts, Objective,
    WindowPhysics,
};
pub use incremental::DecodeState;
pub use train::{
    evaluate_windows, step_caps, train, training_windows, EpochStats, TrainConfig, TrainOutcome,
    Window,
};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    /// Maximum flattened context, in tokens.
    pub max_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.d_model,
            self.n_heads,
            self.n_layers,
            self.d_ff,
            self.vocab_size,
            self.max_len,
        ];
        if dims.contains(&0) {
            return Err(Error::Validation(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Validation(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout {} must lie in [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    /// Query/key/value projections; head `h` owns columns `h·d_k..(h+1)·d_k`.
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Every trainable tensor. Gradients share this type.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub embed: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
    /// `V × d`; logits are `x · w_outᵀ`.
    pub w_out: Array2<f64>,
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, f, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let block = || Block {
            ln1_g: Array1::zeros(d),
            ln1_b: Array1::zeros(d),
            wq: Array2::zeros((d, d)),
            wk: Array2::zeros((d, d)),
            wv: Array2::zeros((d, d)),
            wo: Array2::zeros((d, d)),
            ln2_g: Array1::zeros(d),
            ln2_b: Array1::zeros(d),
            w1: Array2::zeros((d, f)),
            b1: Array1::zeros(f),
            w2: Array2::zeros((f, d)),
            b2: Array1::zeros(d),
        };
        Weights {
            embed: Array2::zeros((v, d)),
            blocks: (0..cfg.n_layers).map(|_| block()).collect(),
            lnf_g: Array1::zeros(d),
            lnf_b: Array1::zeros(d),
            w_out: Array2::zeros((v, d)),
        }
    }

    /// Tensors in declaration order, which is also the checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![(
            "embed".into(),
            self.embed.as_slice().expect("standard layout"),
        )];
        for (l, b) in self.blocks.iter().enumerate() {
            let named: [(&str, &[f64]); 12] = [
                ("ln1_g", b.ln1_g.as_slice().unwrap()),
                ("ln1_b", b.ln1_b.as_slice().unwrap()),
                ("wq", b.wq.as_slice().unwrap()),
                ("wk", b.wk.as_slice().unwrap()),
                ("wv", b.wv.as_slice().unwrap()),
                ("wo", b.wo.as_slice().unwrap()),
                ("ln2_g", b.ln2_g.as_slice().unwrap()),
                ("ln2_b", b.ln2_b.as_slice().unwrap()),
                ("w1", b.w1.as_slice().unwrap()),
                ("b1", b.b1.as_slice().unwrap()),
                ("w2", b.w2.as_slice().unwrap()),
                ("b2", b.b2.as_slice().unwrap()),
            ];
            out.extend(named.into_iter().map(|(n, s)| (format!("block{l}.{n}"), s)));
        }
        out.push(("lnf_g".into(), self.lnf_g.as_slice().unwrap()));
        out.push(("lnf_b".into(), self.lnf_b.as_slice().unwrap()));
        out.push(("w_out".into(), self.w_out.as_slice().unwrap()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![self.embed.as_slice_mut().expect("standard layout")];
        for b in &mut self.blocks {
            out.extend([
                b.ln1_g.as_slice_mut().unwrap(),
                b.ln1_b.as_slice_mut().unwrap(),
                b.wq.as_slice_mut().unwrap(),
                b.wk.as_slice_mut().unwrap(),
                b.wv.as_slice_mut().unwrap(),
                b.wo.as_slice_mut().unwrap(),
                b.ln2_g.as_slice_mut().unwrap(),
                b.ln2_b.as_slice_mut().unwrap(),
                b.w1.as_slice_mut().unwrap(),
                b.b1.as_slice_mut().unwrap(),
                b.w2.as_slice_mut().unwrap(),
                b.b2.as_slice_mut().unwrap(),
            ]);
        }
        out.push(self.lnf_g.as_slice_mut().unwrap());
        out.push(self.lnf_b.as_slice_mut().unwrap());
        out.push(self.w_out.as_slice_mut().unwrap());
        out
    }

    pub fn add_assign(&mut self, other: &Weights) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|a| *a *= k);
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n)
    }
}

/// Trainable weights plus the fixed sinusoidal positional table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub weights: Weights,
    pub positions: Array2<f64>,
}

pub fn sinusoidal_positions(max_len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((max_len, d), |(pos, i)| {
        let freq = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 * freq;
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

impl ModelParams {
    pub fn from_weights(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let expected = Weights::zeros(&config);
        let shapes_ok = expected
            .tensors()
            .iter()
            .zip(weights.tensors())
            .all(|((_, a), (_, b))| a.len() == b.len())
            && expected.blocks.len() == weights.blocks.len();
        if !shapes_ok {
            return Err(Error::Shape("weights do not match model config".into()));
        }
        let positions = sinusoidal_positions(config.max_len, config.d_model);
        Ok(ModelParams {
            config,
            weights,
            positions,
        })
    }

    /// Random initialization: N(0, 0.02) embeddings and output projection,
    /// N(0, 1/fan_in) linear layers with residual projections shrunk by
    /// `1/sqrt(2·layers)`, unit layer-norm gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = Weights::zeros(&config);
        let mut fill = |a: &mut [f64], std: f64| {
            let n = Normal::new(0.0, std).expect("finite std");
            a.iter_mut().for_each(|x| *x = n.sample(&mut rng));
        };
        let d = config.d_model as f64;
        let resid = 1.0 / (2.0 * config.n_layers as f64).sqrt();
        fill(w.embed.as_slice_mut().unwrap(), 0.02);
        for b in &mut w.blocks {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
            fill(b.wq.as_slice_mut().unwrap(), d.powf(-0.5));
            fill(b.wk.as_slice_mut().unwrap(), d.powf(-0.5));
            fill(b.wv.as_slice_mut().unwrap(), d.powf(-0.5));
            fill(b.wo.as_slice_mut().unwrap(), d.powf(-0.5) * resid);
            fill(b.w1.as_slice_mut().unwrap(), d.powf(-0.5));
            fill(
                b.w2.as_slice_mut().unwrap(),
                (config.d_ff as f64).powf(-0.5) * resid,
            );
        }
        w.lnf_g.fill(1.0);
        fill(w.w_out.as_slice_mut().unwrap(), 0.02);
        ModelParams::from_weights(config, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            vocab_size: 24,
            max_len: 12,
            dropout: 0.0,
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny().validate().is_ok());
        assert!(ModelConfig {
            n_heads: 3,
            ..tiny()
        }
        .validate()
        .is_err());
        assert!(ModelConfig { d_ff: 0, ..tiny() }.validate().is_err());
        assert!(ModelConfig {
            dropout: 1.0,
            ..tiny()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let a = ModelParams::init(tiny(), 1).unwrap();
        assert_eq!(a, ModelParams::init(tiny(), 1).unwrap());
        assert_ne!(a.weights, ModelParams::init(tiny(), 2).unwrap().weights);
        assert_eq!(a.weights.tensors().len(), 1 + 12 + 3);
        assert_eq!(a.positions.dim(), (12, 8));
        assert!(a.weights.first_non_finite().is_none());
    }

    #[test]
    fn positional_table_first_row() {
        let p = sinusoidal_positions(4, 6);
        for i in 0..6 {
            assert_eq!(p[[0, i]], if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        assert!((p[[1, 0]] - 1f64.sin()).abs() < 1e-15);
    }
}
