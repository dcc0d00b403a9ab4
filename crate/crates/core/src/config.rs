//! Run configuration: line-based `section.key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key has a default, so a
//! file lists only what it changes. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Channel, SynthConfig};
use crate::error::{Error, Result};
use crate::model::{CeMask, ModelConfig, TrainConfig};
use crate::physics::LossWeights;
use crate::power_curve::EnvelopeOptions;
use crate::provenance::sha256_hex;
use crate::sampler::{Conditioning, DecodeConfig};
use crate::tokenizer::TokenizerOptions;

/// Architecture settings; vocabulary size and context length follow from
/// the tokenizer and the window length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub context_steps: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            d_model: 64,
            n_heads: 4,
            n_layers: 3,
            d_ff: 256,
            dropout: 0.1,
            context_steps: 96,
        }
    }
}

impl ModelSettings {
    pub fn model_config(
        &self,
        vocab_size: usize,
        n_channels: usize,
        horizon: usize,
    ) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            vocab_size,
            max_len: (self.context_steps + horizon) * n_channels,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub kld_bins: usize,
    /// Step between consecutive evaluation windows.
    pub window_stride: usize,
    /// Upper bound on evaluated test windows; 0 keeps all.
    pub max_windows: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            kld_bins: 50,
            window_stride: 24,
            max_windows: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Input SCADA CSV; synthetic data is generated when absent.
    pub data: Option<PathBuf>,
    pub synth_length: usize,
    pub split: [f64; 3],
    pub synth: SynthConfig,
    pub envelope: EnvelopeOptions,
    pub tokenizer: TokenizerOptions,
    pub model: ModelSettings,
    pub train: TrainConfig,
    /// Step between consecutive training windows.
    pub train_stride: usize,
    pub ce_mask: CeMask,
    pub loss: LossWeights,
    pub decode: DecodeConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: None,
            synth_length: 5000,
            split: [0.7, 0.15, 0.15],
            synth: SynthConfig::default(),
            envelope: EnvelopeOptions::default(),
            tokenizer: TokenizerOptions::default(),
            model: ModelSettings::default(),
            train: TrainConfig {
                epochs: 5,
                ..TrainConfig::default()
            },
            train_stride: 24,
            ce_mask: CeMask::AllChannels,
            loss: LossWeights::default(),
            decode: DecodeConfig::default(),
            eval: EvalSettings::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("{key}: cannot parse {value:?}")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value.is_empty() || value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), T::to_string)
}

fn ce_mask_name(m: CeMask) -> &'static str {
    match m {
        CeMask::AllChannels => "all_channels",
        CeMask::PowerOnly => "power_only",
    }
}

fn conditioning_name(c: Conditioning) -> &'static str {
    match c {
        Conditioning::Teacher => "teacher",
        Conditioning::Persistence => "persistence",
    }
}

impl RunConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.synth;
        let t = &self.tokenizer;
        let m = &self.model;
        let d = &self.decode;
        vec![
            ("run.seed", self.seed.to_string()),
            (
                "run.data",
                self.data
                    .as_ref()
                    .map_or("none".into(), |p| p.display().to_string()),
            ),
            ("run.synth_length", self.synth_length.to_string()),
            ("split.train", self.split[0].to_string()),
            ("split.val", self.split[1].to_string()),
            ("split.test", self.split[2].to_string()),
            ("synth.rated_kw", s.rated_kw.to_string()),
            ("synth.wind_mean", s.wind_mean.to_string()),
            ("synth.wind_sigma", s.wind_sigma.to_string()),
            ("synth.power_noise_kw", s.power_noise_kw.to_string()),
            ("synth.icing_fraction", s.icing_fraction.to_string()),
            ("synth.event_count", s.event_count.to_string()),
            ("synth.d_min", s.d_min.to_string()),
            ("synth.icing_noise_mult", s.icing_noise_mult.to_string()),
            ("envelope.alpha", self.envelope.alpha.to_string()),
            (
                "envelope.ramp_quantile",
                self.envelope.ramp_quantile.to_string(),
            ),
            (
                "envelope.relaxed_factor",
                self.envelope.relaxed_factor.to_string(),
            ),
            ("tokenizer.mu", t.mu.to_string()),
            ("tokenizer.power_bins", t.power_bins.to_string()),
            ("tokenizer.wind_bins", t.wind_bins.to_string()),
            ("tokenizer.temperature_bins", t.temperature_bins.to_string()),
            ("tokenizer.operational_bins", t.operational_bins.to_string()),
            (
                "tokenizer.channels",
                t.channels
                    .iter()
                    .map(|c| c.csv_name())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("model.d_model", m.d_model.to_string()),
            ("model.n_heads", m.n_heads.to_string()),
            ("model.n_layers", m.n_layers.to_string()),
            ("model.d_ff", m.d_ff.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("model.context_steps", m.context_steps.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.clip_norm", self.train.clip_norm.to_string()),
            ("train.window_stride", self.train_stride.to_string()),
            ("train.ce_mask", ce_mask_name(self.ce_mask).into()),
            ("loss.lambda_cap", self.loss.lambda_cap.to_string()),
            ("loss.lambda_ramp", self.loss.lambda_ramp.to_string()),
            ("loss.lambda_tv", self.loss.lambda_tv.to_string()),
            ("loss.delta", self.loss.delta.to_string()),
            ("decode.temperature", d.temperature.to_string()),
            ("decode.top_p", d.top_p.to_string()),
            ("decode.horizon", d.horizon.to_string()),
            ("decode.scenarios", d.scenarios.to_string()),
            ("decode.mode", d.mode.clone()),
            ("decode.smoothing_window", d.smoothing_window.to_string()),
            ("decode.alpha", show_opt(&d.alpha)),
            ("decode.ramp_tolerance", show_opt(&d.ramp_tolerance)),
            (
                "decode.stricter_alpha_scale",
                d.stricter_alpha_scale.to_string(),
            ),
            (
                "decode.stricter_ramp_divisor",
                d.stricter_ramp_divisor.to_string(),
            ),
            (
                "decode.conditioning",
                conditioning_name(d.conditioning).into(),
            ),
            ("eval.kld_bins", self.eval.kld_bins.to_string()),
            ("eval.window_stride", self.eval.window_stride.to_string()),
            ("eval.max_windows", self.eval.max_windows.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "run.data" => {
                self.data = if v.is_empty() || v == "none" {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            "run.synth_length" => self.synth_length = parse(key, v)?,
            "split.train" => self.split[0] = parse(key, v)?,
            "split.val" => self.split[1] = parse(key, v)?,
            "split.test" => self.split[2] = parse(key, v)?,
            "synth.rated_kw" => {
                self.synth.rated_kw = parse(key, v)?;
                self.synth.curve.b = self.synth.rated_kw;
            }
            "synth.wind_mean" => self.synth.wind_mean = parse(key, v)?,
            "synth.wind_sigma" => self.synth.wind_sigma = parse(key, v)?,
            "synth.power_noise_kw" => self.synth.power_noise_kw = parse(key, v)?,
            "synth.icing_fraction" => self.synth.icing_fraction = parse(key, v)?,
            "synth.event_count" => self.synth.event_count = parse(key, v)?,
            "synth.d_min" => self.synth.d_min = parse(key, v)?,
            "synth.icing_noise_mult" => self.synth.icing_noise_mult = parse(key, v)?,
            "envelope.alpha" => self.envelope.alpha = parse(key, v)?,
            "envelope.ramp_quantile" => self.envelope.ramp_quantile = parse(key, v)?,
            "envelope.relaxed_factor" => self.envelope.relaxed_factor = parse(key, v)?,
            "tokenizer.mu" => self.tokenizer.mu = parse(key, v)?,
            "tokenizer.power_bins" => self.tokenizer.power_bins = parse(key, v)?,
            "tokenizer.wind_bins" => self.tokenizer.wind_bins = parse(key, v)?,
            "tokenizer.temperature_bins" => self.tokenizer.temperature_bins = parse(key, v)?,
            "tokenizer.operational_bins" => self.tokenizer.operational_bins = parse(key, v)?,
            "tokenizer.channels" => {
                self.tokenizer.channels = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| {
                        s.parse::<Channel>()
                            .map_err(|e| Error::Validation(e.to_string()))
                    })
                    .collect::<Result<_>>()?
            }
            "model.d_model" => self.model.d_model = parse(key, v)?,
            "model.n_heads" => self.model.n_heads = parse(key, v)?,
            "model.n_layers" => self.model.n_layers = parse(key, v)?,
            "model.d_ff" => self.model.d_ff = parse(key, v)?,
            "model.dropout" => self.model.dropout = parse(key, v)?,
            "model.context_steps" => self.model.context_steps = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, v)?,
            "train.window_stride" => self.train_stride = parse(key, v)?,
            "train.ce_mask" => {
                self.ce_mask = match v {
                    "all_channels" => CeMask::AllChannels,
                    "power_only" => CeMask::PowerOnly,
                    _ => {
                        return Err(Error::Validation(format!(
                            "{key}: expected all_channels or power_only"
                        )))
                    }
                }
            }
            "loss.lambda_cap" => self.loss.lambda_cap = parse(key, v)?,
            "loss.lambda_ramp" => self.loss.lambda_ramp = parse(key, v)?,
            "loss.lambda_tv" => self.loss.lambda_tv = parse(key, v)?,
            "loss.delta" => self.loss.delta = parse(key, v)?,
            "decode.temperature" => self.decode.temperature = parse(key, v)?,
            "decode.top_p" => self.decode.top_p = parse(key, v)?,
            "decode.horizon" => self.decode.horizon = parse(key, v)?,
            "decode.scenarios" => self.decode.scenarios = parse(key, v)?,
            "decode.mode" => self.decode.mode = v.to_string(),
            "decode.smoothing_window" => self.decode.smoothing_window = parse(key, v)?,
            "decode.alpha" => self.decode.alpha = parse_opt(key, v)?,
            "decode.ramp_tolerance" => self.decode.ramp_tolerance = parse_opt(key, v)?,
            "decode.stricter_alpha_scale" => self.decode.stricter_alpha_scale = parse(key, v)?,
            "decode.stricter_ramp_divisor" => self.decode.stricter_ramp_divisor = parse(key, v)?,
            "decode.conditioning" => {
                self.decode.conditioning = match v {
                    "teacher" => Conditioning::Teacher,
                    "persistence" => Conditioning::Persistence,
                    _ => {
                        return Err(Error::Validation(format!(
                            "{key}: expected teacher or persistence"
                        )))
                    }
                }
            }
            "eval.kld_bins" => self.eval.kld_bins = parse(key, v)?,
            "eval.window_stride" => self.eval.window_stride = parse(key, v)?,
            "eval.max_windows" => self.eval.max_windows = parse(key, v)?,
            _ => {
                return Err(Error::Validation(format!(
                    "unknown configuration key {key:?}"
                )))
            }
        }
        Ok(())
    }

    /// Parses `section.key = value` lines on top of the defaults and validates.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Validation(format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Canonical text form: every key, one per line.
    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_text().as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        let sum: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return bad(format!(
                "split fractions {:?} must be positive and sum to 1",
                self.split
            ));
        }
        if self.data.is_none() {
            self.synth.validate()?;
        }
        if !(self.envelope.alpha > 0.0 && self.envelope.alpha <= 1.0) {
            return bad(format!(
                "envelope.alpha {} must lie in (0, 1]",
                self.envelope.alpha
            ));
        }
        if !(self.envelope.ramp_quantile > 0.0 && self.envelope.ramp_quantile <= 1.0) {
            return bad("envelope.ramp_quantile must lie in (0, 1]".into());
        }
        if !(self.envelope.relaxed_factor >= 1.0) {
            return bad("envelope.relaxed_factor must be ≥ 1".into());
        }
        if !(self.tokenizer.mu > 0.0)
            || self.tokenizer.power_bins < 2
            || self.tokenizer.wind_bins < 2
        {
            return bad("tokenizer needs μ > 0 and at least 2 power and wind bins".into());
        }
        if !self.tokenizer.channels.contains(&Channel::WindSpeed) {
            return bad("tokenizer.channels must include wind_ms".into());
        }
        if self.tokenizer.channels.contains(&Channel::Power) {
            return bad("tokenizer.channels lists conditioning channels only".into());
        }
        if self.model.context_steps == 0 {
            return bad("model.context_steps must be positive".into());
        }
        self.model
            .model_config(1, 1, self.decode.horizon)
            .validate()?;
        self.train.validate()?;
        if self.train_stride == 0 || self.eval.window_stride == 0 {
            return bad("window strides must be positive".into());
        }
        self.loss.validate()?;
        self.decode.validate()?;
        if self.decode.scenarios < 2 {
            return bad("decode.scenarios must be at least 2 for the diversity score".into());
        }
        if self.eval.kld_bins < 2 {
            return bad("eval.kld_bins must be at least 2".into());
        }
        Ok(())
    }
}
