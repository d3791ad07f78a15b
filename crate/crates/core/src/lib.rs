//! Theory-guided neural network surrogate for 2-D transient groundwater flow.
//!
//! The pipeline: sample a log-conductivity field from a truncated
//! Karhunen-Loève expansion ([`kle`]), solve the flow equation on a grid to
//! get reference heads ([`fdm`]), then fit a tanh network ([`net`]) to sparse
//! observations under PDE, monotonicity and bound constraints ([`physics`]),
//! either with Lagrangian multipliers updated by dual ascent or with fixed
//! weights ([`trainer`]). [`metrics`] scores the result and [`experiments`]
//! runs the comparison studies.

// Validation uses `!(x > 0.0)` so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod experiments;
pub mod fdm;
pub mod kle;
pub mod metrics;
pub mod net;
pub mod physics;
pub mod seeds;
pub mod textio;
pub mod trainer;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
