//! Non-icing baseline power curve and the physics envelope built on it.
//!
//! The baseline is the four-parameter logistic
//! `P(v) = a + (b − a) / (1 + exp(−(v − v0) / s))`, fitted to non-icing rows
//! with a Levenberg–Marquardt schedule.

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::data::SeriesFrame;
use crate::error::{Error, Result};

pub const MIN_FIT_ROWS: usize = 50;
pub const MIN_RAMP_PAIRS: usize = 100;
const MAX_LM_ITERS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub a: f64,
    pub b: f64,
    pub v0: f64,
    pub s: f64,
    /// Residual RMSE of the fit, kW.
    pub rmse: f64,
    pub converged: bool,
}

impl PowerCurve {
    pub fn new(a: f64, b: f64, v0: f64, s: f64) -> Self {
        PowerCurve {
            a,
            b,
            v0,
            s,
            rmse: 0.0,
            converged: true,
        }
    }

    fn params(&self) -> Vector4<f64> {
        Vector4::new(self.a, self.b, self.v0, self.s)
    }

    fn from_params(p: &Vector4<f64>) -> Self {
        PowerCurve::new(p[0], p[1], p[2], p[3])
    }

    /// The logistic without clipping.
    pub fn eval_raw(&self, v: f64) -> f64 {
        let sig = logistic((v - self.v0) / self.s);
        self.a + (self.b - self.a) * sig
    }

    /// Gradient of [`PowerCurve::eval_raw`] with respect to (a, b, v0, s).
    fn jacobian_row(&self, v: f64) -> Vector4<f64> {
        let z = (v - self.v0) / self.s;
        let sig = logistic(z);
        let dsig = sig * (1.0 - sig);
        let span = self.b - self.a;
        Vector4::new(
            1.0 - sig,
            sig,
            -span * dsig / self.s,
            -span * dsig * z / self.s,
        )
    }

    pub fn check(&self) -> Result<()> {
        let ok = [self.a, self.b, self.v0, self.s]
            .iter()
            .all(|x| x.is_finite())
            && self.b > self.a
            && self.a >= 0.0
            && self.s > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "power curve needs b > a ≥ 0 and s > 0, got a={} b={} v0={} s={}",
                self.a, self.b, self.v0, self.s
            )))
        }
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Curve value at wind speed `v`, clipped to `[0, rated_kw]`.
pub fn eval_curve(curve: &PowerCurve, v: f64, rated_kw: f64) -> f64 {
    curve.eval_raw(v).clamp(0.0, rated_kw)
}

/// Nearest-rank empirical quantile of an ascending slice.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn sorted(values: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    v
}

fn sse(curve: &PowerCurve, wind: &[f64], power: &[f64]) -> f64 {
    wind.iter()
        .zip(power)
        .map(|(&v, &p)| (curve.eval_raw(v) - p).powi(2))
        .sum()
}

/// Data-driven starting point: 5th/95th power percentiles for the plateaus,
/// the first wind speed whose power crosses their midpoint for `v0`, `s = 1`.
pub fn initial_curve(wind: &[f64], power: &[f64]) -> PowerCurve {
    let ps = sorted(power.iter().copied());
    let a = quantile_sorted(&ps, 0.05);
    let b = quantile_sorted(&ps, 0.95);
    let mid = 0.5 * (a + b);
    let mut order: Vec<usize> = (0..wind.len()).collect();
    order.sort_by(|&i, &j| wind[i].total_cmp(&wind[j]));
    let v0 = order
        .iter()
        .find(|&&i| power[i] >= mid)
        .map(|&i| wind[i])
        .unwrap_or(wind[order[order.len() / 2]]);
    PowerCurve::new(a, b, v0, 1.0)
}

/// Least-squares logistic fit over the rows of `non_icing`.
pub fn fit_power_curve(non_icing: &SeriesFrame) -> Result<PowerCurve> {
    fit_points(non_icing.wind(), non_icing.power())
}

pub fn fit_points(wind: &[f64], power: &[f64]) -> Result<PowerCurve> {
    if wind.len() != power.len() {
        return Err(Error::Shape("wind and power lengths differ".into()));
    }
    if wind.len() < MIN_FIT_ROWS {
        return Err(Error::InsufficientData(format!(
            "{} rows for curve fit, need at least {MIN_FIT_ROWS}",
            wind.len()
        )));
    }
    let (vmin, vmax) = wind
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if vmax - vmin <= 1e-9 * vmax.abs().max(1.0) {
        return Err(Error::Fit("all wind speeds identical".into()));
    }

    let mut curve = initial_curve(wind, power);
    if curve.b <= curve.a {
        return Err(Error::Fit("power does not vary across wind speeds".into()));
    }
    let mut cost = sse(&curve, wind, power);
    let mut lambda = 1e-3;
    let mut converged = false;
    for _ in 0..MAX_LM_ITERS {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for (&v, &p) in wind.iter().zip(power) {
            let row = curve.jacobian_row(v);
            let r = curve.eval_raw(v) - p;
            jtj += row * row.transpose();
            jtr += row * r;
        }
        if jtr.norm() <= 1e-12 * (1.0 + cost) {
            converged = true;
            break;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for k in 0..4 {
                damped[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&(-jtr));
            let trial = PowerCurve::from_params(&(curve.params() + step));
            let trial_cost = sse(&trial, wind, power);
            if trial.s != 0.0 && trial_cost.is_finite() && trial_cost <= cost {
                let small_step = step.norm() <= 1e-12 * (1.0 + curve.params().norm());
                let small_gain = cost - trial_cost <= 1e-15 * cost;
                curve = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small_step || small_gain;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left: we are at a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }

    if curve.s < 0.0 {
        curve = PowerCurve::new(curve.b, curve.a, curve.v0, -curve.s);
    }
    curve.a = curve.a.max(0.0);
    curve.rmse = (sse(&curve, wind, power) / wind.len() as f64).sqrt();
    curve.converged = converged;
    curve.check().map_err(|e| Error::Fit(e.to_string()))?;
    Ok(curve)
}

/// Ramp limits `(up, down)` in kW per step: the `quantile` of positive
/// increments and of decrement magnitudes over adjacent rows, floored at
/// `1e-6 × rated`.
pub fn estimate_ramp_limits(frame: &SeriesFrame, quantile: f64) -> Result<(f64, f64)> {
    if !(quantile > 0.5 && quantile < 1.0) {
        return Err(Error::Validation(format!(
            "ramp quantile {quantile} must lie in (0.5, 1)"
        )));
    }
    let p = frame.power();
    let deltas: Vec<f64> = (1..frame.len())
        .filter(|&i| frame.is_contiguous_pair(i))
        .map(|i| p[i] - p[i - 1])
        .collect();
    if deltas.len() < MIN_RAMP_PAIRS {
        return Err(Error::InsufficientData(format!(
            "{} consecutive pairs for ramp limits, need at least {MIN_RAMP_PAIRS}",
            deltas.len()
        )));
    }
    let floor = 1e-6 * frame.rated_kw;
    let limit = |vals: Vec<f64>| {
        if vals.is_empty() {
            floor
        } else {
            quantile_sorted(&vals, quantile).max(floor)
        }
    };
    let up = limit(sorted(deltas.iter().copied().filter(|&d| d > 0.0)));
    let down = limit(sorted(deltas.iter().filter(|&&d| d < 0.0).map(|d| -d)));
    Ok((up, down))
}

/// Rated cap, baseline curve and ramp limits shared by training and decoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsEnvelope {
    pub rated_kw: f64,
    pub curve: PowerCurve,
    /// Safety margin on the baseline curve, in (0, 1].
    pub alpha: f64,
    pub ramp_up: f64,
    pub ramp_down: f64,
    /// Relaxed ramp tolerance used to prune decoding candidates.
    pub ramp_relaxed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeOptions {
    pub alpha: f64,
    pub ramp_quantile: f64,
    pub relaxed_factor: f64,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions {
            alpha: 1.0,
            ramp_quantile: 0.99,
            relaxed_factor: 1.5,
        }
    }
}

impl PhysicsEnvelope {
    /// Fits the curve and ramp limits on the non-icing rows of `frame`.
    pub fn fit(frame: &SeriesFrame, opts: &EnvelopeOptions) -> Result<Self> {
        if !(opts.relaxed_factor >= 1.0) {
            return Err(Error::Validation("relaxed_factor must be ≥ 1".into()));
        }
        let normal = frame.filter_icing(false);
        let curve = fit_power_curve(&normal)?;
        let (ramp_up, ramp_down) = estimate_ramp_limits(&normal, opts.ramp_quantile)?;
        let env = PhysicsEnvelope {
            rated_kw: frame.rated_kw,
            curve,
            alpha: opts.alpha,
            ramp_up,
            ramp_down,
            ramp_relaxed: opts.relaxed_factor * ramp_up.max(ramp_down),
        };
        env.validate()?;
        Ok(env)
    }

    pub fn validate(&self) -> Result<()> {
        self.curve.check()?;
        let bad = |m: String| Err(Error::Validation(m));
        if !(self.rated_kw > 0.0 && self.rated_kw.is_finite()) {
            return bad(format!("rated power {} must be positive", self.rated_kw));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} must lie in (0, 1]", self.alpha));
        }
        if !(self.ramp_up > 0.0 && self.ramp_down > 0.0) {
            return bad("ramp limits must be positive".into());
        }
        if !(self.ramp_relaxed >= self.ramp_up.max(self.ramp_down)) {
            return bad("relaxed ramp tolerance must be ≥ max(ramp_up, ramp_down)".into());
        }
        Ok(())
    }

    /// Baseline power at wind speed `v`, clipped to `[0, rated]`.
    pub fn p_norm(&self, v: f64) -> f64 {
        eval_curve(&self.curve, v, self.rated_kw)
    }

    /// `min(rated, α · P_norm(v))`, kW.
    pub fn cap(&self, v: f64) -> f64 {
        self.rated_kw.min(self.alpha * self.p_norm(v))
    }
}
