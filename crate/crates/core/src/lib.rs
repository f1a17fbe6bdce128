//! Numerical core for the single-location regression (SLR) task.
//!
//! The crate computes Bayes risks and population risks of single-layer
//! attention predictors, iterates the Bayes-optimal and empirical-risk
//! state-evolution equations at finite sample ratio, and trains
//! finite-dimensional attention models to cross-check them.
//!
//! It builds without `std` (an allocator is required). The `parallel`
//! feature fans Monte Carlo reductions out over rayon; results are
//! bit-identical with and without it because every draw has its own
//! counter-based random stream and reductions run in index order.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod activation;
pub mod bo;
pub mod data;
pub mod erm;
mod error;
pub mod linalg;
pub mod math;
pub mod model;
pub mod optim;
mod par;
pub mod population;
pub mod quadrature;
pub mod rng;
pub mod sim;
pub mod stats;

pub use activation::ActivationKind;
pub use error::{Error, Result};
pub use model::{LengthLaw, ModelConfig, Task};
pub use stats::RiskEstimate;
