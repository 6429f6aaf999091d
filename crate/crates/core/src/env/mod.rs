//! Market environments.
//!
//! * [`TwoPeriodRegimeEnv`]: one risky asset, two volatility regimes, two decisions.
//! * [`RsVarEnv`]: regime-switching VAR(1) simulator with turnover costs.
//! * [`HistoricalEnv`]: replays a return file with sell-then-buy rebalancing.

mod data;
mod historical;
mod rs_var;
mod two_period;

pub use data::{
    load_returns_csv, read_returns_csv, rolling_zscore, write_returns_csv, ReturnData, ZScored,
};
pub use historical::{rebalance, CostSchedule, FeatureScaling, HistoricalEnv};
pub use rs_var::{rs_var_step, stationary_distribution, RegimeVarModel, RsVarEnv, Scenario};
pub use two_period::{Regime, TwoPeriodRegimeEnv, TwoPeriodRegimeModel};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::Rng;

/// Everything an environment tracks about the investor and the market.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub wealth: f64,
    pub shares: Vec<f64>,
    pub balance: f64,
    pub exogenous: Vec<f64>,
    pub regime: Option<usize>,
    pub step: usize,
    pub prev_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub state: MarketState,
    pub reward: f64,
    pub done: bool,
}

/// Episodic environment driven by simplex actions.
pub trait Environment {
    fn reset(&mut self, rng: &mut Rng) -> Result<MarketState>;
    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult>;
    /// Network input for a state.
    fn features(&self, state: &MarketState) -> Vec<f64>;
    fn feature_dim(&self) -> usize;
    /// Width of the action simplex.
    fn action_dim(&self) -> usize;
    /// Labels for the action coordinates.
    fn action_labels(&self) -> Vec<String>;
    /// Human-readable tag for a state in trajectory output.
    fn state_label(&self, state: &MarketState) -> String {
        state.step.to_string()
    }
}

/// Checks that `w` is a probability vector within `tol`.
pub fn check_simplex(w: &[f64], dim: usize, tol: f64) -> Result<()> {
    if w.len() != dim {
        return Err(Error::Shape {
            expected: dim,
            got: w.len(),
        });
    }
    let total: f64 = w.iter().sum();
    if w.iter().any(|x| !(*x >= -tol) || !x.is_finite()) || (total - 1.0).abs() > tol {
        return Err(Error::Domain(format!("action {w:?} is not on the simplex")));
    }
    Ok(())
}
