//! Simulator for relational quantum time: a static history state over a
//! discretized clock, conditioned to recover dynamics, propagators and
//! multi-time measurement statistics.

pub mod clock;
pub mod error;
pub mod history;
pub mod measurement;
pub mod oracle;
pub mod scenario;
pub mod tensor;

pub use error::{Error, Result};
