//! Constrained reinforcement learning laboratory built around extreme value
//! theory: peaks-over-threshold tail modeling of cost distributions, an
//! extreme-quantile constraint inside a trust-region policy optimizer,
//! extreme-prioritized replay, and calculators for the associated
//! theoretical bounds, exercised on bundled desk-scale CMDP environments.
//!
//! Module map:
//! - [`cmdp`]: trajectory accounting, discounted returns, GAE.
//! - [`envs`]: bundled environments behind a single [`envs::Environment`] trait.
//! - [`evt`]: GPD fitting, quantiles, risk boundary, goodness-of-fit.
//! - [`replay`]: extreme-prioritized replay with importance resampling.
//! - [`policy`]: small tanh policies/value functions with analytic gradients.
//! - [`trustregion`]: the constrained trust-region step and bound calculators.
//! - [`harness`]: the training loop, config, metrics, evaluation.

pub mod cmdp;
pub mod envs;
pub mod error;
pub mod evt;
pub mod harness;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod trustregion;

pub use error::{EvoError, Result};
