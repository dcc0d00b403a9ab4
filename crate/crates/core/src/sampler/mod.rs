//! Constrained nucleus decoding of power trajectories.
//!
//! Each step takes the model's distribution over power tokens, applies
//! temperature and top-p filtering, drops candidates that break the cap or
//! ramp limits of the active [`ConstraintMode`], and samples the rest by
//! inverse CDF. An empty feasible set falls back to [`project_back`].

mod io;
mod modes;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DecodeState, ModelParams};
use crate::power_curve::PhysicsEnvelope;
use crate::tokenizer::{TokenId, TokenSequence, TokenizerSpec};

pub use io::{read_scenarios_csv, write_scenarios_csv};
pub use modes::{ConstraintMode, Limits, ModeRegistry};

/// Source of the non-power tokens over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    /// Observed future conditioning channels.
    Teacher,
    /// The last context step repeated.
    Persistence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub horizon: usize,
    pub scenarios: usize,
    pub seed: u64,
    pub mode: String,
    /// Centred moving-average window; 1 disables smoothing. Only modes with
    /// limits smooth.
    pub smoothing_window: usize,
    /// Replaces the envelope's α before mode scaling.
    pub alpha: Option<f64>,
    /// Replaces the envelope's relaxed ramp tolerance (kW) before mode scaling.
    pub ramp_tolerance: Option<f64>,
    pub stricter_alpha_scale: f64,
    pub stricter_ramp_divisor: f64,
    pub conditioning: Conditioning,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            temperature: 1.0,
            top_p: 0.9,
            horizon: 24,
            scenarios: 50,
            seed: 0,
            mode: "default".into(),
            smoothing_window: 3,
            alpha: None,
            ramp_tolerance: None,
            stricter_alpha_scale: 0.95,
            stricter_ramp_divisor: 1.5,
            conditioning: Conditioning::Teacher,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(format!("decode config: {m}")));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} must lie in (0, 1]", self.top_p));
        }
        if self.horizon == 0 || self.scenarios == 0 {
            return bad("horizon and scenario count must be positive".into());
        }
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return bad(format!(
                "smoothing window {} must be odd",
                self.smoothing_window
            ));
        }
        if self.alpha.is_some_and(|a| !(a > 0.0 && a <= 1.0)) {
            return bad("alpha override must lie in (0, 1]".into());
        }
        if self
            .ramp_tolerance
            .is_some_and(|r| !(r > 0.0 && r.is_finite()))
        {
            return bad("ramp tolerance override must be positive".into());
        }
        if !(self.stricter_alpha_scale > 0.0 && self.stricter_alpha_scale <= 1.0)
            || !(self.stricter_ramp_divisor >= 1.0)
        {
            return bad("stricter factors must tighten the limits".into());
        }
        Ok(())
    }
}

/// `M × H` generated trajectories for one conditioning window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSet {
    pub window_id: usize,
    /// Power per scenario and step, kW.
    pub power: Vec<Vec<f64>>,
    /// True where the step came from projection rather than sampling.
    pub projected: Vec<Vec<bool>>,
    /// Conditioning wind speed per horizon step, m/s.
    pub wind: Vec<f64>,
    pub rated_kw: f64,
    pub mode: String,
    pub seed: u64,
    /// Projections that found no feasible token at all.
    pub warnings: usize,
}

impl ScenarioSet {
    pub fn scenarios(&self) -> usize {
        self.power.len()
    }

    pub fn horizon(&self) -> usize {
        self.wind.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.horizon();
        if self.power.is_empty() || h == 0 {
            return Err(Error::Shape("empty scenario set".into()));
        }
        if self.projected.len() != self.power.len()
            || self.power.iter().any(|r| r.len() != h)
            || self.projected.iter().any(|r| r.len() != h)
        {
            return Err(Error::Shape("ragged scenario set".into()));
        }
        if self
            .power
            .iter()
            .flatten()
            .any(|&p| !(0.0..=self.rated_kw).contains(&p))
        {
            return Err(Error::Domain(format!(
                "scenario power outside [0, {}]",
                self.rated_kw
            )));
        }
        Ok(())
    }
}

/// Temperature scaling and top-p truncation. Returns the retained
/// `(token, probability)` pairs in ascending token order, renormalized.
pub fn nucleus_filter(probs: &[f64], temperature: f64, top_p: f64) -> Vec<(TokenId, f64)> {
    let logs: Vec<f64> = probs
        .iter()
        .map(|&p| {
            if p > 0.0 {
                p.ln() / temperature
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = logs.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = scaled.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| scaled[i] > 0.0).collect();
    order.sort_by(|&a, &b| scaled[b].total_cmp(&scaled[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for i in order {
        kept.push(i);
        mass += scaled[i] / total;
        if mass >= top_p - 1e-12 {
            break;
        }
    }
    kept.sort_unstable();
    let kept_mass: f64 = kept.iter().map(|&i| scaled[i]).sum();
    kept.into_iter()
        .map(|i| (i as TokenId, scaled[i] / kept_mass))
        .collect()
}

/// Candidates whose de-quantized power respects the cap at `wind_next` and
/// lies within the ramp tolerance of `p_prev`. `None` limits keep everything.
pub fn prune_candidates(
    candidates: &[(TokenId, f64)],
    p_prev: f64,
    wind_next: f64,
    env: &PhysicsEnvelope,
    levels_kw: &[f64],
    limits: Option<&Limits>,
) -> Vec<(TokenId, f64)> {
    match limits {
        None => candidates.to_vec(),
        Some(l) => candidates
            .iter()
            .copied()
            .filter(|&(t, _)| {
                let v = levels_kw[t as usize];
                l.cap_ok(env, v, wind_next) && l.ramp_ok(v, p_prev)
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Projection {
    pub token: TokenId,
    /// No power token satisfies the limits; `token` minimizes total violation.
    pub warning: bool,
}

/// Feasible power token closest to `p_prev` (lower id on ties).
pub fn project_back(
    p_prev: f64,
    wind_next: f64,
    env: &PhysicsEnvelope,
    levels_kw: &[f64],
    limits: &Limits,
) -> Projection {
    let mut best: Option<(f64, usize)> = None;
    for (i, &v) in levels_kw.iter().enumerate() {
        if limits.cap_ok(env, v, wind_next) && limits.ramp_ok(v, p_prev) {
            let d = (v - p_prev).abs();
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
    }
    if let Some((_, i)) = best {
        return Projection {
            token: i as TokenId,
            warning: false,
        };
    }
    let mut least = (f64::INFINITY, 0);
    for (i, &v) in levels_kw.iter().enumerate() {
        let viol = limits.violation(env, v, p_prev, wind_next);
        if viol < least.0 {
            least = (viol, i);
        }
    }
    Projection {
        token: least.1 as TokenId,
        warning: true,
    }
}

/// Sample from `(token, prob)` pairs by inverse CDF with uniform `u`.
fn inverse_cdf(candidates: &[(TokenId, f64)], u: f64) -> TokenId {
    let total: f64 = candidates.iter().map(|c| c.1).sum();
    let target = u * total;
    let mut acc = 0.0;
    for &(t, p) in candidates {
        acc += p;
        if target < acc {
            return t;
        }
    }
    candidates.last().expect("non-empty candidates").0
}

/// Centred moving average; the window shrinks symmetrically at the edges.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = values.len();
    (0..n)
        .map(|t| {
            let r = half.min(t).min(n - 1 - t);
            values[t - r..=t + r].iter().sum::<f64>() / (2 * r + 1) as f64
        })
        .collect()
}

fn trajectory_feasible(
    z: &[f64],
    p0: f64,
    wind: &[f64],
    env: &PhysicsEnvelope,
    limits: &Limits,
) -> bool {
    let mut prev = p0;
    z.iter().zip(wind).all(|(&v, &w)| {
        let ok = v >= 0.0 && limits.cap_ok(env, v, w) && limits.ramp_ok(v, prev);
        prev = v;
        ok
    })
}

/// Sequential projection of `smoothed` into the limits: each value is
/// clamped into the interval allowed by its predecessor and its cap. Falls
/// back to the largest blend `λ·smoothed + (1 − λ)·sampled` (λ halved from
/// 1) and finally to `sampled` itself.
fn reproject(
    sampled: &[f64],
    smoothed: &[f64],
    p0: f64,
    wind: &[f64],
    env: &PhysicsEnvelope,
    limits: &Limits,
) -> Vec<f64> {
    if let Some(z) = clamp_forward(smoothed, p0, wind, env, limits) {
        if trajectory_feasible(&z, p0, wind, env, limits) {
            return z;
        }
    }
    let mut lambda = 1.0;
    for _ in 0..30 {
        lambda *= 0.5;
        let z: Vec<f64> = sampled
            .iter()
            .zip(smoothed)
            .map(|(&s, &y)| lambda * y + (1.0 - lambda) * s)
            .collect();
        if trajectory_feasible(&z, p0, wind, env, limits) {
            return z;
        }
    }
    sampled.to_vec()
}

fn clamp_forward(
    y: &[f64],
    p0: f64,
    wind: &[f64],
    env: &PhysicsEnvelope,
    limits: &Limits,
) -> Option<Vec<f64>> {
    let mut prev = p0;
    let mut out = Vec::with_capacity(y.len());
    for (&v, &w) in y.iter().zip(wind) {
        let mut lo = (prev - limits.ramp).max(0.0);
        let mut hi = (prev + limits.ramp).min(limits.cap(env, w));
        // tighten by ulps until the exact predicate holds at both ends
        while lo <= hi && !limits.ramp_ok(lo, prev) {
            lo = lo.next_up();
        }
        while lo <= hi && !limits.ramp_ok(hi, prev) {
            hi = hi.next_down();
        }
        if lo > hi {
            return None;
        }
        let z = v.clamp(lo, hi);
        out.push(z);
        prev = z;
    }
    Some(out)
}

fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Decode("non-finite power logits".into()));
    }
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|x| x / s).collect())
}

/// The last context step repeated `horizon` times.
pub fn persistence_conditioning(context: &TokenSequence, horizon: usize) -> TokenSequence {
    let last = context.step(context.steps() - 1);
    TokenSequence {
        n_channels: context.n_channels,
        tokens: last.repeat(horizon),
    }
}

/// Generates `cfg.scenarios` trajectories of `cfg.horizon` steps after
/// `context`. Scenario `m` draws from its own ChaCha stream (seed, stream
/// `m`) with exactly one uniform per step, so modes compared on the same
/// seed see the same draws.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    params: &ModelParams,
    context: &TokenSequence,
    future: &TokenSequence,
    env: &PhysicsEnvelope,
    spec: &TokenizerSpec,
    cfg: &DecodeConfig,
    registry: &ModeRegistry,
) -> Result<ScenarioSet> {
    cfg.validate()?;
    let c = spec.n_channels();
    if context.n_channels != c || context.steps() == 0 {
        return Err(Error::Shape(format!(
            "context must hold at least one {c}-channel step"
        )));
    }
    let horizon = cfg.horizon;
    let future = match cfg.conditioning {
        Conditioning::Teacher => future.clone(),
        Conditioning::Persistence => persistence_conditioning(context, horizon),
    };
    if future.n_channels != c || future.steps() < horizon {
        return Err(Error::Shape(format!(
            "conditioning covers {} of {horizon} steps",
            future.steps()
        )));
    }
    let max_steps = params.config.max_len / c;
    if horizon >= max_steps {
        return Err(Error::Context {
            len: horizon * c,
            max: params.config.max_len,
        });
    }
    let ctx_steps = context.steps().min(max_steps - horizon);
    let context = context.window(context.steps() - ctx_steps..context.steps());
    let limits = registry.get(&cfg.mode)?.limits(env, cfg);

    let bins = spec.power_bins();
    let levels_kw: Vec<f64> = (0..bins)
        .map(|t| spec.mu_law_decode(t as TokenId))
        .collect::<Result<_>>()?;
    let wind_slot = spec.wind_slot();
    let wind: Vec<f64> = (0..horizon)
        .map(|h| spec.decode_slot(wind_slot, future.step(h)[wind_slot]))
        .collect::<Result<_>>()?;
    let p0 = spec.mu_law_decode(context.step(ctx_steps - 1)[0])?;
    let prefill = DecodeState::prefill(params, &context.tokens)?;

    let rows: Vec<(Vec<f64>, Vec<bool>, usize)> = (0..cfg.scenarios)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(m as u64);
            let mut state = prefill.clone();
            let mut p_prev = p0;
            let mut values = Vec::with_capacity(horizon);
            let mut flags = Vec::with_capacity(horizon);
            let mut warnings = 0;
            for h in 0..horizon {
                let logits = state.logits().expect("prefilled state has logits");
                let probs = softmax(
                    logits
                        .slice(ndarray::s![..bins])
                        .as_slice()
                        .expect("contiguous"),
                )?;
                let candidates = nucleus_filter(&probs, cfg.temperature, cfg.top_p);
                let feasible = prune_candidates(
                    &candidates,
                    p_prev,
                    wind[h],
                    env,
                    &levels_kw,
                    limits.as_ref(),
                );
                let u: f64 = rng.random();
                let token = if feasible.is_empty() {
                    let proj = project_back(
                        p_prev,
                        wind[h],
                        env,
                        &levels_kw,
                        limits.as_ref().expect("pruning implies limits"),
                    );
                    warnings += proj.warning as usize;
                    flags.push(true);
                    proj.token
                } else {
                    flags.push(false);
                    inverse_cdf(&feasible, u)
                };
                p_prev = levels_kw[token as usize];
                values.push(p_prev);
                if h + 1 < horizon {
                    state.push(params, token)?;
                    for &t in &future.step(h)[1..] {
                        state.push(params, t)?;
                    }
                }
            }
            // smoothing is bounded by the physical limits, so a mode
            // without limits keeps the raw sampled trajectory
            let smoothed = match &limits {
                Some(l) if cfg.smoothing_window > 1 => reproject(
                    &values,
                    &smooth(&values, cfg.smoothing_window),
                    p0,
                    &wind,
                    env,
                    l,
                ),
                _ => values,
            };
            let clipped = smoothed
                .into_iter()
                .map(|v| v.clamp(0.0, env.rated_kw))
                .collect();
            Ok((clipped, flags, warnings))
        })
        .collect::<Result<_>>()?;

    let warnings = rows.iter().map(|r| r.2).sum();
    if warnings > 0 {
        log::warn!("{warnings} decoding steps found no feasible power token");
    }
    let (power, projected): (Vec<_>, Vec<_>) = rows.into_iter().map(|(p, f, _)| (p, f)).unzip();
    Ok(ScenarioSet {
        window_id: 0,
        power,
        projected,
        wind,
        rated_kw: env.rated_kw,
        mode: cfg.mode.clone(),
        seed: cfg.seed,
        warnings,
    })
}
