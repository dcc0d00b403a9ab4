//! Physics penalties on a power trajectory and the composite objective.
//!
//! All penalties work in normalized power (fraction of rated). The `*_loss`
//! functions take kW series and normalize at the boundary; the `*_penalty`
//! functions are the normalized kernels, returning values and gradients for
//! the training objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power_curve::PhysicsEnvelope;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cap: f64,
    pub lambda_ramp: f64,
    pub lambda_tv: f64,
    /// Huber threshold, normalized power units.
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cap: 1.0,
            lambda_ramp: 0.5,
            lambda_tv: 0.1,
            delta: 0.05,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda_cap: 0.0,
        lambda_ramp: 0.0,
        lambda_tv: 0.0,
        delta: 0.05,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_cap, self.lambda_ramp, self.lambda_tv];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(Error::Validation(format!(
                "loss weights must be non-negative, got {all:?}"
            )));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Validation(format!(
                "huber delta {} must be positive",
                self.delta
            )));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.lambda_cap == 0.0 && self.lambda_ramp == 0.0 && self.lambda_tv == 0.0
    }
}

/// `(1/L) Σ [p_t − cap_t]₊` and its gradient.
pub fn cap_penalty(p: &[f64], caps: &[f64]) -> Result<(f64, Vec<f64>)> {
    if p.len() != caps.len() || p.is_empty() {
        return Err(Error::Shape(format!(
            "cap penalty: {} values vs {} caps",
            p.len(),
            caps.len()
        )));
    }
    let n = p.len() as f64;
    let mut value = 0.0;
    let grad = p
        .iter()
        .zip(caps)
        .map(|(&x, &c)| {
            if x > c {
                value += x - c;
                1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((value / n, grad))
}

/// `(1/L) Σ_{t≥2} [(Δ_t − up)₊² + (−Δ_t − down)₊²]` with `Δ_t = p_t − p_{t−1}`.
pub fn ramp_penalty(p: &[f64], up: f64, down: f64) -> Result<(f64, Vec<f64>)> {
    if p.len() < 2 {
        return Err(Error::Shape("ramp penalty needs at least 2 steps".into()));
    }
    let n = p.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for t in 1..p.len() {
        let d = p[t] - p[t - 1];
        let over_up = (d - up).max(0.0);
        let over_down = (-d - down).max(0.0);
        value += over_up * over_up + over_down * over_down;
        let g = (2.0 * over_up - 2.0 * over_down) / n;
        grad[t] += g;
        grad[t - 1] -= g;
    }
    Ok((value / n, grad))
}

pub fn huber(z: f64, delta: f64) -> f64 {
    if z.abs() <= delta {
        0.5 * z * z
    } else {
        delta * (z.abs() - 0.5 * delta)
    }
}

pub fn huber_grad(z: f64, delta: f64) -> f64 {
    z.clamp(-delta, delta)
}

/// `(1/L) Σ_{t≥2} ρ_δ(p_t − p_{t−1})`.
pub fn tv_penalty(p: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    if p.len() < 2 {
        return Err(Error::Shape("tv penalty needs at least 2 steps".into()));
    }
    let n = p.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![0.0; p.len()];
    for t in 1..p.len() {
        let d = p[t] - p[t - 1];
        value += huber(d, delta);
        let g = huber_grad(d, delta) / n;
        grad[t] += g;
        grad[t - 1] -= g;
    }
    Ok((value / n, grad))
}

fn normalized(p_kw: &[f64], rated_kw: f64) -> Vec<f64> {
    p_kw.iter().map(|p| p / rated_kw).collect()
}

/// Mean cap excess over `min(rated, α·P_norm(v_t))`, normalized units.
pub fn cap_loss(p_kw: &[f64], wind: &[f64], env: &PhysicsEnvelope) -> Result<f64> {
    if p_kw.len() != wind.len() {
        return Err(Error::Shape(format!(
            "{} power values vs {} wind values",
            p_kw.len(),
            wind.len()
        )));
    }
    let caps: Vec<f64> = wind.iter().map(|&v| env.cap(v) / env.rated_kw).collect();
    Ok(cap_penalty(&normalized(p_kw, env.rated_kw), &caps)?.0)
}

pub fn ramp_loss(p_kw: &[f64], env: &PhysicsEnvelope) -> Result<f64> {
    let r = env.rated_kw;
    Ok(ramp_penalty(&normalized(p_kw, r), env.ramp_up / r, env.ramp_down / r)?.0)
}

pub fn tv_loss(p_kw: &[f64], delta: f64, rated_kw: f64) -> Result<f64> {
    Ok(tv_penalty(&normalized(p_kw, rated_kw), delta)?.0)
}

pub fn total_loss(ce: f64, cap: f64, ramp: f64, tv: f64, w: &LossWeights) -> f64 {
    ce + w.lambda_cap * cap + w.lambda_ramp * ramp + w.lambda_tv * tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::power_curve::PowerCurve;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn env() -> PhysicsEnvelope {
        PhysicsEnvelope {
            rated_kw: 1000.0,
            curve: PowerCurve::new(0.0, 1000.0, 9.0, 1.5),
            alpha: 1.0,
            ramp_up: 100.0,
            ramp_down: 150.0,
            ramp_relaxed: 225.0,
        }
    }

    fn random_series(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(0.0..1.0)).collect()
    }

    #[test]
    fn cap_hinge_inactive_below_cap() {
        let (v, g) = cap_penalty(&[0.1, 0.2], &[0.5, 0.2]).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn cap_single_excess() {
        let mut p = vec![0.3; 10];
        p[4] = 0.6;
        let (v, _) = cap_penalty(&p, &[0.5; 10]).unwrap();
        assert!((v - 0.01).abs() < 1e-15);
    }

    #[test]
    fn cap_loss_matches_loop_oracle() {
        let e = env();
        let p: Vec<f64> = random_series(1, 40).iter().map(|x| x * 1000.0).collect();
        let wind: Vec<f64> = random_series(2, 40).iter().map(|x| x * 20.0).collect();
        let mut oracle = 0.0;
        for t in 0..40 {
            let cap = (e.curve.eval_raw(wind[t]).clamp(0.0, 1000.0) * e.alpha).min(1000.0);
            oracle += ((p[t] - cap) / 1000.0).max(0.0);
        }
        oracle /= 40.0;
        assert!((cap_loss(&p, &wind, &e).unwrap() - oracle).abs() < 1e-12);
        assert!(cap_loss(&p, &wind[..39], &e).is_err());
    }

    #[test]
    fn ramp_single_up_step() {
        let e = env();
        let r = e.ramp_up / e.rated_kw;
        let p = [0.2, 0.2, 0.2 + r + 0.2, 0.4 + r, 0.4 + r].map(|x| x * 1000.0);
        assert!((ramp_loss(&p, &e).unwrap() - 0.04 / 5.0).abs() < 1e-12);
        assert_eq!(ramp_loss(&[500.0; 8], &e).unwrap(), 0.0);
        assert!(ramp_loss(&[1.0], &e).is_err());
    }

    #[test]
    fn ramp_loss_matches_loop_oracle() {
        let e = env();
        let p: Vec<f64> = random_series(3, 30).iter().map(|x| x * 1000.0).collect();
        let mut oracle = 0.0;
        for t in 1..30 {
            let d = (p[t] - p[t - 1]) / 1000.0;
            oracle += (d - 0.1).max(0.0).powi(2) + (-d - 0.15).max(0.0).powi(2);
        }
        assert!((ramp_loss(&p, &e).unwrap() - oracle / 30.0).abs() < 1e-12);
    }

    #[test]
    fn tv_boundary_and_linear_branch() {
        let delta = 0.05;
        let mut p = vec![0.0; 4];
        p[2..].iter_mut().for_each(|x| *x = delta);
        assert!((tv_penalty(&p, delta).unwrap().0 - delta * delta / 2.0 / 4.0).abs() < 1e-15);
        p[2..].iter_mut().for_each(|x| *x = 3.0 * delta);
        let expected = delta * (3.0 * delta - delta / 2.0) / 4.0;
        assert!((tv_penalty(&p, delta).unwrap().0 - expected).abs() < 1e-15);
        assert_eq!(tv_loss(&[7.0; 5], delta, 1000.0).unwrap(), 0.0);
    }

    #[test]
    fn huber_is_c1_at_threshold() {
        let d = 0.05;
        let eps = 1e-9;
        assert!((huber(d - eps, d) - huber(d + eps, d)).abs() < 1e-9);
        let slope = |z: f64| (huber(z + 1e-7, d) - huber(z - 1e-7, d)) / 2e-7;
        assert!((slope(d - 1e-6) - slope(d + 1e-6)).abs() < 1e-5);
    }

    #[test]
    fn composite_is_linear_in_weights() {
        let w = LossWeights {
            lambda_cap: 1.0,
            lambda_ramp: 1.0,
            lambda_tv: 1.0,
            delta: 0.05,
        };
        assert_eq!(total_loss(1.0, 2.0, 3.0, 4.0, &w), 10.0);
        assert_eq!(total_loss(1.5, 2.0, 3.0, 4.0, &LossWeights::ZERO), 1.5);
        let w2 = LossWeights {
            lambda_cap: 2.0,
            ..w
        };
        assert_eq!(
            total_loss(1.0, 2.0, 3.0, 4.0, &w2) - total_loss(1.0, 2.0, 3.0, 4.0, &w),
            2.0
        );
        assert!(LossWeights {
            lambda_cap: -0.1,
            ..w
        }
        .validate()
        .is_err());
        assert!(LossWeights { delta: 0.0, ..w }.validate().is_err());
    }

    fn finite_diff(f: impl Fn(&[f64]) -> f64, p: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut a = p.to_vec();
        let mut b = p.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let p = random_series(11, 12);
        let caps = random_series(12, 12);
        let checks: [(&dyn Fn(&[f64]) -> (f64, Vec<f64>), &str); 3] = [
            (&|x: &[f64]| cap_penalty(x, &caps).unwrap(), "cap"),
            (&|x: &[f64]| ramp_penalty(x, 0.05, 0.08).unwrap(), "ramp"),
            (&|x: &[f64]| tv_penalty(x, 0.2).unwrap(), "tv"),
        ];
        for (f, name) in checks {
            let (_, g) = f(&p);
            for i in 0..p.len() {
                let fd = finite_diff(|x| f(x).0, &p, i);
                let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-8);
                assert!(
                    err < 1e-6 || (fd - g[i]).abs() < 1e-10,
                    "{name}[{i}]: {fd} vs {}",
                    g[i]
                );
            }
        }
    }

    proptest! {
        #[test]
        fn penalties_non_negative_and_shift_invariant(seed in 0u64..500, shift in -0.5f64..0.5) {
            let p = random_series(seed, 16);
            let shifted: Vec<f64> = p.iter().map(|x| x + shift).collect();
            let (r1, _) = ramp_penalty(&p, 0.1, 0.1).unwrap();
            let (r2, _) = ramp_penalty(&shifted, 0.1, 0.1).unwrap();
            let (t1, _) = tv_penalty(&p, 0.05).unwrap();
            let (t2, _) = tv_penalty(&shifted, 0.05).unwrap();
            prop_assert!(r1 >= 0.0 && t1 >= 0.0);
            prop_assert!((r1 - r2).abs() < 1e-12 && (t1 - t2).abs() < 1e-12);
            let caps = vec![0.5; 16];
            let (c1, _) = cap_penalty(&p, &caps).unwrap();
            prop_assert!(c1 >= 0.0);
            // lowering a value that is already under its cap changes nothing
            let mut lowered = p.clone();
            if let Some(i) = lowered.iter().position(|&x| x < 0.5) {
                lowered[i] -= 0.1;
                prop_assert_eq!(cap_penalty(&lowered, &caps).unwrap().0, c1);
            }
        }
    }
}
