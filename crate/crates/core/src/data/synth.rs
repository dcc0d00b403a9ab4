use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{SeriesFrame, STEP_SECONDS};
use crate::error::{Error, Result};
use crate::power_curve::PowerCurve;

/// Parameters of the synthetic icing-event generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub rated_kw: f64,
    pub curve: PowerCurve,
    pub wind_mean: f64,
    pub wind_ar: f64,
    pub wind_sigma: f64,
    pub wind_diurnal_amp: f64,
    pub wind_max: f64,
    pub power_noise_kw: f64,
    pub power_noise_ar: f64,
    /// Share of all rows inside icing events.
    pub icing_fraction: f64,
    pub event_count: usize,
    /// Share of rows at the start kept free of icing.
    pub lead_fraction: f64,
    pub onset_steps: usize,
    pub recovery_steps: usize,
    /// Degradation factor at the bottom of an event.
    pub d_min: f64,
    /// Power-noise multiplier inside icing events.
    pub icing_noise_mult: f64,
    pub context_steps: usize,
    pub horizon: usize,
    pub start_timestamp: i64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            rated_kw: 2000.0,
            curve: PowerCurve::new(0.0, 2000.0, 9.0, 1.5),
            wind_mean: 8.0,
            wind_ar: 0.98,
            wind_sigma: 0.35,
            wind_diurnal_amp: 1.0,
            wind_max: 25.0,
            power_noise_kw: 20.0,
            power_noise_ar: 0.5,
            icing_fraction: 0.6,
            event_count: 3,
            lead_fraction: 0.15,
            onset_steps: 60,
            recovery_steps: 120,
            d_min: 0.45,
            icing_noise_mult: 2.5,
            context_steps: 96,
            horizon: 24,
            // 2024-01-01T00:00:00Z
            start_timestamp: 1_704_067_200,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("synth: {m}")));
        if !(self.rated_kw > 0.0) {
            return bad("rated_kw must be positive");
        }
        if !(0.0..1.0).contains(&self.wind_ar)
            || !(self.wind_sigma >= 0.0)
            || !(self.power_noise_kw >= 0.0)
        {
            return bad("wind/noise process parameters out of range");
        }
        if !(0.0..1.0).contains(&self.power_noise_ar) {
            return bad("power_noise_ar must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.icing_fraction) || !(0.0..1.0).contains(&self.lead_fraction) {
            return bad("icing_fraction and lead_fraction must lie in [0, 1)");
        }
        if !(self.d_min > 0.0 && self.d_min <= 1.0) || !(self.icing_noise_mult >= 0.0) {
            return bad("d_min must lie in (0, 1] and icing_noise_mult must be non-negative");
        }
        Ok(())
    }

    /// Degradation factor at offset `k` inside an event of `len` rows.
    fn degradation(&self, k: usize, len: usize) -> f64 {
        let drop = 1.0 - self.d_min;
        let onset = self.onset_steps.min(len);
        let recovery = self.recovery_steps.min(len - onset);
        if k < onset {
            1.0 - drop * (k + 1) as f64 / onset as f64
        } else if k >= len - recovery {
            let j = k - (len - recovery);
            self.d_min + drop * (j + 1) as f64 / (recovery + 1) as f64
        } else {
            self.d_min
        }
    }
}

/// Generates a deterministic synthetic SCADA frame with labelled icing events.
///
/// Wind follows a clipped AR(1) process with a diurnal term; non-icing power
/// follows the configured logistic curve plus AR(1) noise; inside icing
/// events power is multiplied by a degradation factor that ramps down to
/// `d_min`, holds, and recovers, while the noise level is raised.
pub fn synth_icing(cfg: &SynthConfig, length: usize, seed: u64) -> Result<SeriesFrame> {
    cfg.validate()?;
    let min_len = 2 * cfg.context_steps + cfg.horizon;
    if length < min_len.max(2) {
        return Err(Error::InsufficientData(format!(
            "synthetic length {length} below 2·context + horizon = {min_len}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut d = vec![1.0; length];
    let mut icing = vec![false; length];
    let lead = (cfg.lead_fraction * length as f64) as usize;
    if cfg.event_count > 0 && cfg.icing_fraction > 0.0 {
        let slot = (length - lead) / cfg.event_count;
        let event_len = ((cfg.icing_fraction * length as f64) as usize / cfg.event_count).min(slot);
        for e in 0..cfg.event_count {
            let slack = slot - event_len;
            let start = lead
                + e * slot
                + if slack > 0 {
                    rng.random_range(0..=slack)
                } else {
                    0
                };
            for k in 0..event_len {
                d[start + k] = cfg.degradation(k, event_len);
                icing[start + k] = true;
            }
        }
    }

    let mut frame = SeriesFrame::with_capacity(cfg.rated_kw, length);
    let mut wind_dev = 0.0;
    let mut noise = 0.0;
    let mut temp_dev = 0.0;
    let mut yaw: f64 = rng.random_range(0.0..360.0);
    let noise_scale = (1.0 - cfg.power_noise_ar * cfg.power_noise_ar).sqrt();
    for t in 0..length {
        let day = 2.0 * PI * (t as f64) / 1440.0;
        wind_dev = cfg.wind_ar * wind_dev + cfg.wind_sigma * std_normal.sample(&mut rng);
        let wind =
            (cfg.wind_mean + wind_dev + cfg.wind_diurnal_amp * day.sin()).clamp(0.0, cfg.wind_max);

        noise = cfg.power_noise_ar * noise + noise_scale * std_normal.sample(&mut rng);
        let sigma = cfg.power_noise_kw * if icing[t] { cfg.icing_noise_mult } else { 1.0 };
        let base = cfg.curve.eval_raw(wind).clamp(0.0, cfg.rated_kw);
        let power = (d[t] * base + sigma * noise).clamp(0.0, cfg.rated_kw);

        temp_dev = 0.995 * temp_dev + 0.05 * std_normal.sample(&mut rng);
        let temp =
            -2.0 + 4.0 * (day - PI / 2.0).sin() + temp_dev - if icing[t] { 1.5 } else { 0.0 };

        let pitch = ((wind - 12.5) * 2.5).clamp(0.0, 25.0)
            + if icing[t] { 0.5 } else { 0.0 }
            + 0.2 * std_normal.sample(&mut rng).abs();

        yaw = (yaw + 0.8 * std_normal.sample(&mut rng)).rem_euclid(360.0);

        let rpm = if wind < 3.0 {
            0.0
        } else {
            (600.0 + 100.0 * wind).min(1800.0)
        };
        let rpm =
            (rpm * if icing[t] { 0.97 } else { 1.0 } + 5.0 * std_normal.sample(&mut rng)).max(0.0);

        frame.push(
            cfg.start_timestamp + t as i64 * STEP_SECONDS,
            [power, wind, temp, pitch, yaw, rpm],
            icing[t],
        );
    }
    Ok(frame)
}
