//! Controlled quantum systems under discrete observation.
//!
//! Measurements are Kraus-form instruments, conditional states are propagated
//! by the a posteriori filter, and optimal measurement-feedback strategies
//! come from finite-horizon dynamic programming over the posterior tree (or
//! over the last outcome, for complete measurements). An exhaustive strategy
//! enumerator and a Monte Carlo simulator serve as independent checks.

pub mod control;
pub mod dynamics;
pub mod error;
pub mod filter;
pub mod instrument;
pub mod qcore;
pub mod random;
pub mod sim;

pub use error::{Error, Result};
