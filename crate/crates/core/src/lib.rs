//! Quantile-targeted dynamic portfolio choice.
//!
//! * [`quantile_dp`]: exact tau-quantile dynamic programming and closed-form oracles.
//! * [`critic`] / [`actor`] / [`trainer`]: the quantile actor-critic learner.
//! * [`env`]: two-period regime world, regime-switching VAR simulator and a
//!   historical-returns environment with rebalancing frictions.
//! * [`metrics`]: tail-aware performance statistics.

pub mod actor;
pub mod critic;
pub mod env;
pub mod error;
pub mod mathcore;
pub mod metrics;
pub mod quantile_dp;
pub mod trainer;

pub use error::{Error, Result};
