use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::data::{rolling_zscore, ReturnData};
use super::{check_simplex, Environment, MarketState, StepResult};
use crate::error::{Error, Result};
use crate::mathcore::Rng;

/// Proportional trading cost and gross per-step interest on cash.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSchedule {
    pub rate: f64,
    pub interest: f64,
}

impl CostSchedule {
    pub fn new(rate: f64, interest: f64) -> Result<Self> {
        if !(rate >= 0.0 && rate < 1.0) {
            return Err(Error::Config(format!(
                "cost rate {rate} must lie in [0, 1)"
            )));
        }
        if !(interest >= 1.0) || !interest.is_finite() {
            return Err(Error::Config(format!(
                "balance interest {interest} must be >= 1"
            )));
        }
        Ok(Self { rate, interest })
    }
}

/// Multipliers applied to raw state quantities before they reach a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub wealth: f64,
    pub shares: f64,
    pub balance: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            wealth: 0.0005,
            shares: 0.01,
            balance: 10.0,
        }
    }
}

/// Moves holdings toward `target` (fractions of current wealth; an optional
/// trailing coordinate is the cash share) at `prices`: sells first, then buys
/// with the proceeds. Buys are scaled back by one common ratio when cash runs
/// short. The remaining balance then earns one step of interest.
pub fn rebalance(
    state: &MarketState,
    target: &[f64],
    prices: &[f64],
    cost: &CostSchedule,
) -> Result<MarketState> {
    let n = state.shares.len();
    let dim = if target.len() == n + 1 { n + 1 } else { n };
    check_simplex(target, dim, 1e-9)?;
    if prices.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: prices.len(),
        });
    }
    if prices.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Data(format!(
            "prices must be positive, got {prices:?}"
        )));
    }
    let mut shares = state.shares.clone();
    let mut balance = state.balance;
    let held: Vec<f64> = shares.iter().zip(prices).map(|(s, p)| s * p).collect();
    let wealth = held.iter().sum::<f64>() + balance;
    let goal: Vec<f64> = target[..n].iter().map(|w| w * wealth).collect();
    let dust = 1e-12 * wealth.abs().max(1.0);

    for i in 0..n {
        let excess = held[i] - goal[i];
        if excess > dust {
            shares[i] = (shares[i] - excess / prices[i]).max(0.0);
            balance += excess * (1.0 - cost.rate);
        }
    }
    let need: Vec<f64> = (0..n)
        .map(|i| {
            let gap = goal[i] - held[i];
            if gap > dust {
                gap
            } else {
                0.0
            }
        })
        .collect();
    let demand: f64 = need.iter().sum();
    if demand > 0.0 {
        let ratio = if demand > balance {
            (balance / demand).max(0.0)
        } else {
            1.0
        };
        let mut spent = 0.0;
        for i in 0..n {
            let spend = need[i] * ratio;
            shares[i] += spend * (1.0 - cost.rate) / prices[i];
            spent += spend;
        }
        balance = (balance - spent).max(0.0);
    }
    balance *= cost.interest;
    let wealth_after = shares.iter().zip(prices).map(|(s, p)| s * p).sum::<f64>() + balance;
    Ok(MarketState {
        wealth: wealth_after,
        shares,
        balance,
        exogenous: state.exogenous.clone(),
        regime: state.regime,
        step: state.step,
        prev_weights: state.prev_weights.clone(),
    })
}

/// Replays historical returns over a row range. Rows before the z-score
/// warm-up are never used as decision points.
#[derive(Clone, Debug)]
pub struct HistoricalEnv {
    data: Arc<ReturnData>,
    prices: Vec<f64>,
    zreturns: Vec<f64>,
    zfeatures: Vec<f64>,
    range: Range<usize>,
    cost: CostSchedule,
    reward_scale: f64,
    initial_wealth: f64,
    scaling: FeatureScaling,
    cash_slot: bool,
    t: usize,
    state: Option<MarketState>,
}

impl HistoricalEnv {
    pub fn new(
        data: Arc<ReturnData>,
        range: Range<usize>,
        cost: CostSchedule,
        reward_scale: f64,
        initial_wealth: f64,
        window: usize,
        scaling: FeatureScaling,
    ) -> Result<Self> {
        let n = data.n_assets();
        let rows = data.rows();
        if range.end > rows {
            return Err(Error::Config(format!(
                "row range {range:?} exceeds {rows} rows"
            )));
        }
        let zr = rolling_zscore(&data.returns, n, window)?;
        let zfeatures = if data.n_features() > 0 {
            rolling_zscore(&data.features, data.n_features(), window)?.values
        } else {
            Vec::new()
        };
        let start = range.start.max(zr.warmup);
        if range.end < start + 2 {
            return Err(Error::InsufficientData {
                needed: start + 2,
                got: range.end,
            });
        }
        if !(initial_wealth > 0.0) {
            return Err(Error::Config("initial wealth must be positive".into()));
        }
        let mut prices = vec![1.0; rows * n];
        for t in 1..rows {
            for i in 0..n {
                prices[t * n + i] = prices[(t - 1) * n + i] * (1.0 + data.returns[t * n + i]);
            }
        }
        Ok(Self {
            data,
            prices,
            zreturns: zr.values,
            zfeatures,
            range: start..range.end,
            cost,
            reward_scale,
            initial_wealth,
            scaling,
            cash_slot: false,
            t: start,
            state: None,
        })
    }

    /// Adds an explicit cash coordinate as the last action slot.
    pub fn with_cash_slot(mut self, on: bool) -> Self {
        self.cash_slot = on;
        self
    }

    /// Rows actually used for decisions (warm-up excluded).
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn steps_per_episode(&self) -> usize {
        self.range.len() - 1
    }

    pub fn data(&self) -> &ReturnData {
        &self.data
    }

    pub fn prices_at(&self, t: usize) -> &[f64] {
        let n = self.data.n_assets();
        &self.prices[t * n..(t + 1) * n]
    }

    /// Row index of the current decision point.
    pub fn current_row(&self) -> usize {
        self.t
    }

    pub fn date_at(&self, t: usize) -> &str {
        &self.data.dates[t]
    }

    fn snapshot(&self, shares: Vec<f64>, balance: f64, step: usize) -> MarketState {
        let prices = self.prices_at(self.t);
        let held: Vec<f64> = shares.iter().zip(prices).map(|(s, p)| s * p).collect();
        let wealth = held.iter().sum::<f64>() + balance;
        let mut prev_weights: Vec<f64> = held.iter().map(|h| h / wealth).collect();
        prev_weights.push(balance / wealth);
        let n = self.data.n_assets();
        let f = self.data.n_features();
        let mut exogenous = self.zreturns[self.t * n..(self.t + 1) * n].to_vec();
        exogenous.extend_from_slice(&self.zfeatures[self.t * f..(self.t + 1) * f]);
        MarketState {
            wealth,
            shares,
            balance,
            exogenous,
            regime: None,
            step,
            prev_weights,
        }
    }
}

impl Environment for HistoricalEnv {
    fn reset(&mut self, _rng: &mut Rng) -> Result<MarketState> {
        self.t = self.range.start;
        let n = self.data.n_assets();
        let prices = self.prices_at(self.t);
        let shares: Vec<f64> = prices
            .iter()
            .map(|p| self.initial_wealth / n as f64 / p)
            .collect();
        let s = self.snapshot(shares, 0.0, 0);
        self.state = Some(s.clone());
        Ok(s)
    }

    fn step(&mut self, action: &[f64], _rng: &mut Rng) -> Result<StepResult> {
        let s = self
            .state
            .take()
            .ok_or_else(|| Error::Config("step called before reset".into()))?;
        if self.t + 1 >= self.range.end {
            return Err(Error::Config("episode already finished".into()));
        }
        check_simplex(action, self.action_dim(), 1e-9)?;
        let traded = rebalance(&s, action, self.prices_at(self.t), &self.cost)?;
        self.t += 1;
        let next = self.snapshot(traded.shares, traded.balance, s.step + 1);
        if !(next.wealth > 0.0) || !next.wealth.is_finite() {
            return Err(Error::Data(format!(
                "wealth became {} at row {}",
                next.wealth, self.t
            )));
        }
        let reward = self.reward_scale * (next.wealth / s.wealth).ln();
        let done = self.t + 1 >= self.range.end;
        self.state = Some(next.clone());
        Ok(StepResult {
            state: next,
            reward,
            done,
        })
    }

    fn features(&self, state: &MarketState) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.feature_dim());
        f.push(state.wealth * self.scaling.wealth);
        f.extend(state.shares.iter().map(|s| s * self.scaling.shares));
        f.push(state.balance * self.scaling.balance);
        f.extend_from_slice(&state.exogenous);
        f
    }

    fn feature_dim(&self) -> usize {
        2 + 2 * self.data.n_assets() + self.data.n_features()
    }

    fn action_dim(&self) -> usize {
        self.data.n_assets() + usize::from(self.cash_slot)
    }

    fn action_labels(&self) -> Vec<String> {
        let mut v = self.data.assets.clone();
        if self.cash_slot {
            v.push("cash".into());
        }
        v
    }

    fn state_label(&self, state: &MarketState) -> String {
        self.data.dates[(self.range.start + state.step).min(self.data.rows() - 1)].clone()
    }
}
