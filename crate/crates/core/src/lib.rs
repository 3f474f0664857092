//! Gradient-only exact-tilt sampling.
//!
//! The centerpiece is first-order rejection sampling ([`fors`]): rejection
//! sampling whose acceptance coin is synthesized from bounded unbiased
//! estimates of a log-density ratio, so only gradients (or scores) are ever
//! queried. On top of it sit
//!
//! * [`tilt`]: sampling Gaussian tilts `exp(-f(x) - ‖x - x₀‖²/2η)`,
//! * [`diffusion`]: backward samplers for variance-preserving DDPMs,
//! * [`proximal`]: the proximal sampler for log-concave targets,
//!
//! plus analytic Gaussian-mixture score oracles ([`scores`]) and the
//! distributional checks used to validate all of the above ([`metrics`]).

// NaN-rejecting guards are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diffusion;
pub mod error;
pub mod fors;
pub mod metrics;
pub mod proximal;
pub mod quadrature;
pub mod rng;
pub mod schedule;
pub mod scores;
pub mod tilt;
pub mod vecops;

pub use error::{Error, Result};
pub use fors::{factory_accept, fors_sample, poisson_draw, EstimatorFamily, ForsOutcome, ForsParams};
