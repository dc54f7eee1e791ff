//! Multi-objective gradient methods and a learned optimizer.
//!
//! The crate provides a Frank-Wolfe min-norm solver for common descent
//! directions, the stochastic and dynamic-sampling variants built on it,
//! a coordinatewise LSTM optimizer meta-trained by truncated BPTT, a
//! guarded combination of the two, Pareto-front metrics and an experiment
//! harness.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod minnorm;
pub mod ml2o;
pub mod numerics;
pub mod optimizers;
pub mod problems;
pub mod record;
pub mod rng;
pub mod safeguard;

pub use error::{Error, Result};
