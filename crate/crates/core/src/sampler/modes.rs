//! Constraint modes, registered by name and selected at run time.

use std::fmt;

use super::DecodeConfig;
use crate::error::{Error, Result};
use crate::power_curve::PhysicsEnvelope;

/// Active feasibility limits during decoding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Limits {
    pub rated_kw: f64,
    pub alpha: f64,
    /// Symmetric ramp tolerance per step, kW.
    pub ramp: f64,
}

impl Limits {
    pub fn cap(&self, env: &PhysicsEnvelope, wind: f64) -> f64 {
        self.rated_kw.min(self.alpha * env.p_norm(wind))
    }

    pub fn cap_ok(&self, env: &PhysicsEnvelope, value: f64, wind: f64) -> bool {
        value <= self.cap(env, wind)
    }

    pub fn ramp_ok(&self, value: f64, prev: f64) -> bool {
        (value - prev).abs() <= self.ramp
    }

    /// Cap and ramp excess of `value`; zero iff feasible.
    pub fn violation(&self, env: &PhysicsEnvelope, value: f64, prev: f64, wind: f64) -> f64 {
        (value - self.cap(env, wind)).max(0.0) + ((value - prev).abs() - self.ramp).max(0.0)
    }
}

pub trait ConstraintMode: Send + Sync {
    fn name(&self) -> &str;

    /// Limits enforced while decoding, or `None` for free sampling.
    fn limits(&self, env: &PhysicsEnvelope, cfg: &DecodeConfig) -> Option<Limits>;
}

fn base_limits(env: &PhysicsEnvelope, cfg: &DecodeConfig) -> Limits {
    Limits {
        rated_kw: env.rated_kw,
        alpha: cfg.alpha.unwrap_or(env.alpha),
        ramp: cfg.ramp_tolerance.unwrap_or(env.ramp_relaxed),
    }
}

struct Unconstrained;

impl ConstraintMode for Unconstrained {
    fn name(&self) -> &str {
        "unconstrained"
    }

    fn limits(&self, _: &PhysicsEnvelope, _: &DecodeConfig) -> Option<Limits> {
        None
    }
}

struct Standard;

impl ConstraintMode for Standard {
    fn name(&self) -> &str {
        "default"
    }

    fn limits(&self, env: &PhysicsEnvelope, cfg: &DecodeConfig) -> Option<Limits> {
        Some(base_limits(env, cfg))
    }
}

/// Tighter cap and ramp tolerance.
struct Stricter;

impl ConstraintMode for Stricter {
    fn name(&self) -> &str {
        "stricter"
    }

    fn limits(&self, env: &PhysicsEnvelope, cfg: &DecodeConfig) -> Option<Limits> {
        let base = base_limits(env, cfg);
        Some(Limits {
            alpha: base.alpha * cfg.stricter_alpha_scale,
            ramp: base.ramp / cfg.stricter_ramp_divisor,
            ..base
        })
    }
}

pub struct ModeRegistry {
    modes: Vec<Box<dyn ConstraintMode>>,
}

impl fmt::Debug for ModeRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl Default for ModeRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModeRegistry {
    pub fn empty() -> Self {
        ModeRegistry { modes: Vec::new() }
    }

    /// `unconstrained`, `default` and `stricter`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        for m in [
            Box::new(Unconstrained) as Box<dyn ConstraintMode>,
            Box::new(Standard),
            Box::new(Stricter),
        ] {
            r.register(m).expect("built-in names are distinct");
        }
        r
    }

    pub fn register(&mut self, mode: Box<dyn ConstraintMode>) -> Result<()> {
        if self.modes.iter().any(|m| m.name() == mode.name()) {
            return Err(Error::Validation(format!(
                "constraint mode {:?} already registered",
                mode.name()
            )));
        }
        self.modes.push(mode);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&dyn ConstraintMode> {
        self.modes
            .iter()
            .find(|m| m.name() == name)
            .map(|m| m.as_ref())
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown constraint mode {name:?}; known: {}",
                    self.names().join(", ")
                ))
            })
    }

    pub fn names(&self) -> Vec<&str> {
        self.modes.iter().map(|m| m.name()).collect()
    }
}
