//! Physics-aware probabilistic wind-power scenario generation under icing.
//!
//! The crate is organised as a pipeline:
//!
//! - [`data`]: SCADA-style frames, CSV ingest, chronological splits and a
//!   synthetic icing-event generator.
//! - [`power_curve`]: the non-icing logistic power curve and the physics
//!   envelope (rated cap, ramp limits).
//! - [`tokenizer`]: μ-law power quantization, quantile binning of the
//!   conditioning channels and the shared vocabulary layout.
//! - [`model`]: a small causal decoder-only Transformer with exact
//!   reverse-mode gradients and an Adam training loop.
//! - [`physics`]: cap / ramp / total-variation penalties and the composite
//!   objective.
//! - [`sampler`]: constrained nucleus decoding; constraint modes are
//!   strategies registered by name in a [`sampler::ModeRegistry`].
//! - [`metrics`]: CRPS, histogram KL divergence, violation rate, diversity
//!   and projection rate.
//! - [`config`] and [`pipeline`]: the `key = value` run configuration and the
//!   end-to-end orchestration used by the `icegen` binary.

// NaN must fail range checks, so negated comparisons are intentional
#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod physics;
pub mod pipeline;
pub mod power_curve;
pub mod provenance;
pub mod sampler;
pub mod tokenizer;

pub use error::{Error, ErrorClass, Result};
