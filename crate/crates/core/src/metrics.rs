//! Probabilistic accuracy and physical-consistency scores.
//!
//! Power enters every score as a fraction of rated power. The violation
//! rate is reported twice: `vr_strict` against the ramp limits R↑/R↓ and
//! `vr_relaxed` against the relaxed tolerance used while decoding. Both use
//! the curve cap `min(rated, α·P_norm(v))` at the scenario's conditioning wind.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power_curve::PhysicsEnvelope;
use crate::sampler::ScenarioSet;

pub const KLD_EPS: f64 = 1e-6;
pub const DEFAULT_KLD_BINS: usize = 50;

/// `(1/M)Σ|x_m − y| − (1/2M²)Σ_mΣ_j|x_m − x_j|`.
pub fn crps_ensemble(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Shape("empty ensemble".into()));
    }
    let m = samples.len() as f64;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let abs_err: f64 = sorted.iter().map(|x| (x - y).abs()).sum::<f64>() / m;
    // Σ_{i<j}(x_(j) − x_(i)) = Σ_i x_(i)·(2i − M + 1)
    let spread: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, x)| x * (2.0 * i as f64 - m + 1.0))
        .sum();
    Ok(abs_err - spread / (m * m))
}

/// Mean over steps of the per-step ensemble CRPS, normalized units.
pub fn crps_trajectory(set: &ScenarioSet, truth_kw: &[f64]) -> Result<f64> {
    if truth_kw.len() != set.horizon() {
        return Err(Error::Shape(format!(
            "{} truth values for horizon {}",
            truth_kw.len(),
            set.horizon()
        )));
    }
    let r = set.rated_kw;
    let mut total = 0.0;
    for (h, &y) in truth_kw.iter().enumerate() {
        let column: Vec<f64> = set.power.iter().map(|row| row[h] / r).collect();
        total += crps_ensemble(&column, y / r)?;
    }
    Ok(total / truth_kw.len() as f64)
}

fn histogram(values: &[f64], bins: usize) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        let k = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[k] += 1.0;
    }
    let total = values.len() as f64 + KLD_EPS * bins as f64;
    counts.iter().map(|c| (c + KLD_EPS) / total).collect()
}

/// `Σ p_ref·ln(p_ref/p_gen)` over equal-width bins on [0, 1]; values are
/// normalized power, each bin mass is smoothed by `KLD_EPS`.
pub fn kld_histogram(generated: &[f64], reference: &[f64], bins: usize) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(Error::Shape("KL divergence needs non-empty samples".into()));
    }
    if bins < 2 {
        return Err(Error::Validation(format!(
            "{bins} histogram bins, need at least 2"
        )));
    }
    let p = histogram(reference, bins);
    let q = histogram(generated, bins);
    Ok(p.iter()
        .zip(&q)
        .map(|(p, q)| p * (p / q).ln())
        .sum::<f64>()
        .max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RampLimits {
    /// R↑ / R↓.
    Strict,
    /// The relaxed decoding tolerance R̃.
    Relaxed,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationCounts {
    pub cap: usize,
    pub ramp: usize,
    pub checks: usize,
}

impl ViolationCounts {
    pub fn rate(&self) -> f64 {
        if self.checks == 0 {
            0.0
        } else {
            100.0 * (self.cap + self.ramp) as f64 / self.checks as f64
        }
    }

    fn add(&mut self, o: ViolationCounts) {
        self.cap += o.cap;
        self.ramp += o.ramp;
        self.checks += o.checks;
    }
}

/// Cap checks at every step and ramp checks at every consecutive pair of
/// each trajectory.
pub fn violation_counts(
    set: &ScenarioSet,
    env: &PhysicsEnvelope,
    limits: RampLimits,
) -> ViolationCounts {
    let (up, down) = match limits {
        RampLimits::Strict => (env.ramp_up, env.ramp_down),
        RampLimits::Relaxed => (env.ramp_relaxed, env.ramp_relaxed),
    };
    let caps: Vec<f64> = set.wind.iter().map(|&v| env.cap(v)).collect();
    let mut c = ViolationCounts::default();
    for row in &set.power {
        c.cap += row.iter().zip(&caps).filter(|(p, cap)| p > cap).count();
        c.ramp += row
            .windows(2)
            .filter(|w| w[1] - w[0] > up || w[0] - w[1] > down)
            .count();
        c.checks += row.len() + row.len().saturating_sub(1);
    }
    c
}

/// Percentage of failing step checks.
pub fn violation_rate(set: &ScenarioSet, env: &PhysicsEnvelope, limits: RampLimits) -> f64 {
    violation_counts(set, env, limits).rate()
}

/// Mean over steps of the population standard deviation across scenarios.
pub fn diversity_score(set: &ScenarioSet) -> Result<f64> {
    let m = set.scenarios();
    if m < 2 {
        return Err(Error::Shape(format!(
            "diversity needs at least 2 scenarios, got {m}"
        )));
    }
    let h = set.horizon();
    let r = set.rated_kw;
    let mut total = 0.0;
    for t in 0..h {
        let mean = set.power.iter().map(|row| row[t] / r).sum::<f64>() / m as f64;
        let var = set
            .power
            .iter()
            .map(|row| (row[t] / r - mean).powi(2))
            .sum::<f64>()
            / m as f64;
        total += var.sqrt();
    }
    Ok(total / h as f64)
}

/// Percentage of steps produced by projection.
pub fn projection_rate(set: &ScenarioSet) -> f64 {
    let cells = set.scenarios() * set.horizon();
    if cells == 0 {
        return 0.0;
    }
    100.0 * set.projected.iter().flatten().filter(|&&p| p).count() as f64 / cells as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub crps: f64,
    pub kld: f64,
    pub vr_strict: f64,
    pub vr_relaxed: f64,
    pub diversity: f64,
    pub projection_rate: f64,
    pub windows: usize,
    pub scenarios: usize,
    pub horizon: usize,
    pub mode: String,
    pub seed: u64,
    pub kld_bins: usize,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let rates_ok = [self.vr_strict, self.vr_relaxed, self.projection_rate]
            .iter()
            .all(|r| (0.0..=100.0).contains(r));
        if !(self.crps >= 0.0 && self.kld >= 0.0 && self.diversity >= 0.0 && rates_ok) {
            return Err(Error::Domain(format!("report out of range: {self:?}")));
        }
        Ok(())
    }
}

/// Scores scenario sets against their observed trajectories. CRPS and
/// diversity are averaged over windows; KLD, violation and projection
/// rates pool every step of every window.
pub fn evaluate(
    sets: &[ScenarioSet],
    truths_kw: &[Vec<f64>],
    env: &PhysicsEnvelope,
    kld_bins: usize,
) -> Result<EvalReport> {
    let first = sets
        .first()
        .ok_or_else(|| Error::Shape("no scenario sets to evaluate".into()))?;
    if sets.len() != truths_kw.len() {
        return Err(Error::Shape(format!(
            "{} scenario sets for {} truth windows",
            sets.len(),
            truths_kw.len()
        )));
    }
    let r = env.rated_kw;
    let mut crps = 0.0;
    let mut diversity = 0.0;
    let mut strict = ViolationCounts::default();
    let mut relaxed = ViolationCounts::default();
    let mut projected = 0.0;
    let mut cells = 0usize;
    let mut generated = Vec::new();
    let mut reference = Vec::new();
    for (set, truth) in sets.iter().zip(truths_kw) {
        set.validate()?;
        crps += crps_trajectory(set, truth)?;
        diversity += diversity_score(set)?;
        strict.add(violation_counts(set, env, RampLimits::Strict));
        relaxed.add(violation_counts(set, env, RampLimits::Relaxed));
        let n = set.scenarios() * set.horizon();
        projected += projection_rate(set) * n as f64;
        cells += n;
        generated.extend(set.power.iter().flatten().map(|p| p / r));
        reference.extend(truth.iter().map(|p| p / r));
    }
    let k = sets.len() as f64;
    let report = EvalReport {
        crps: crps / k,
        kld: kld_histogram(&generated, &reference, kld_bins)?,
        vr_strict: strict.rate(),
        vr_relaxed: relaxed.rate(),
        diversity: diversity / k,
        projection_rate: projected / cells as f64,
        windows: sets.len(),
        scenarios: first.scenarios(),
        horizon: first.horizon(),
        mode: first.mode.clone(),
        seed: first.seed,
        kld_bins,
    };
    report.validate()?;
    Ok(report)
}
