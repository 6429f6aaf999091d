use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_simplex, Environment, MarketState, StepResult};
use crate::error::{Error, Result};
use crate::mathcore::Rng;

/// Transition-matrix presets for the three-regime simulator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    BullBear,
    NeutralBear,
    BullNeutral,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [
        Scenario::BullBear,
        Scenario::NeutralBear,
        Scenario::BullNeutral,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::BullBear => "bull-bear",
            Scenario::NeutralBear => "neutral-bear",
            Scenario::BullNeutral => "bull-neutral",
        }
    }

    /// Row-stochastic matrix over (Bull, Neutral, Bear).
    pub fn transition(self) -> [f64; 9] {
        match self {
            Scenario::BullBear => [0.74, 0.02, 0.24, 0.10, 0.82, 0.08, 0.30, 0.02, 0.68],
            Scenario::NeutralBear => [0.82, 0.08, 0.10, 0.02, 0.68, 0.30, 0.02, 0.24, 0.74],
            Scenario::BullNeutral => [0.74, 0.24, 0.02, 0.30, 0.68, 0.02, 0.10, 0.08, 0.82],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown scenario '{s}' (bull-bear, neutral-bear, bull-neutral)"
                ))
            })
    }
}

pub const REGIME_LABELS: [&str; 3] = ["bull", "neutral", "bear"];

/// `r_{t+1} = c_k + Phi r_t + u`, `u ~ N(0, Sigma_k)`, with `k` a Markov chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeVarModel {
    pub regimes: usize,
    pub assets: usize,
    pub drifts: Vec<Vec<f64>>,
    /// Row-major `assets x assets`.
    pub phi: Vec<f64>,
    /// Row-major `assets x assets` per regime.
    pub covariances: Vec<Vec<f64>>,
    /// Row-major `regimes x regimes`.
    pub transition: Vec<f64>,
    pub rf: f64,
    #[serde(skip)]
    chol: Vec<Vec<f64>>,
}

impl RegimeVarModel {
    pub fn new(
        drifts: Vec<Vec<f64>>,
        phi: Vec<f64>,
        covariances: Vec<Vec<f64>>,
        transition: Vec<f64>,
        rf: f64,
    ) -> Result<Self> {
        let k = drifts.len();
        if k == 0 {
            return Err(Error::Config(
                "regime model needs at least one regime".into(),
            ));
        }
        let n = drifts[0].len();
        if n == 0 || drifts.iter().any(|d| d.len() != n) {
            return Err(Error::Config(
                "drift vectors must share one nonzero length".into(),
            ));
        }
        if phi.len() != n * n {
            return Err(Error::Shape {
                expected: n * n,
                got: phi.len(),
            });
        }
        if covariances.len() != k || covariances.iter().any(|c| c.len() != n * n) {
            return Err(Error::Config(format!(
                "need {k} covariance matrices of size {n}x{n}"
            )));
        }
        if transition.len() != k * k {
            return Err(Error::Shape {
                expected: k * k,
                got: transition.len(),
            });
        }
        for row in transition.chunks(k) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "transition row {row:?} is not a distribution"
                )));
            }
        }
        if !(rf > 0.0) || !rf.is_finite() {
            return Err(Error::Config(format!(
                "risk-free gross rate {rf} must be positive"
            )));
        }
        let chol = covariances
            .iter()
            .map(|c| cholesky_psd(c, n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            regimes: k,
            assets: n,
            drifts,
            phi,
            covariances,
            transition,
            rf,
            chol,
        })
    }

    /// Two-asset, three-regime calibration with the given transition preset.
    pub fn preset(scenario: Scenario) -> Self {
        Self::new(
            vec![
                vec![0.0040, 0.0030],
                vec![0.0030, 0.0028],
                vec![-0.0090, 0.0030],
            ],
            vec![0.15, 0.10, 0.10, 0.15],
            vec![
                vec![0.0005, 0.0001, 0.0001, 0.00045],
                vec![0.0018, 0.0, 0.0, 0.0014],
                vec![0.0050, -0.0030, -0.0030, 0.0020],
            ],
            scenario.transition().to_vec(),
            1.001,
        )
        .expect("preset parameters are valid")
    }

    /// Rebuilds the cached Cholesky factors (needed after deserialising).
    pub fn refresh(self) -> Result<Self> {
        Self::new(
            self.drifts,
            self.phi,
            self.covariances,
            self.transition,
            self.rf,
        )
    }

    pub fn transition_row(&self, k: usize) -> &[f64] {
        &self.transition[k * self.regimes..(k + 1) * self.regimes]
    }

    /// `c_k + Phi r`.
    pub fn conditional_mean(&self, r: &[f64], k: usize) -> Vec<f64> {
        let n = self.assets;
        (0..n)
            .map(|i| self.drifts[k][i] + (0..n).map(|j| self.phi[i * n + j] * r[j]).sum::<f64>())
            .collect()
    }

    /// Draw of `r_{t+1}` given `r_t` and the current regime.
    pub fn sample_returns(&self, r: &[f64], k: usize, rng: &mut Rng) -> Vec<f64> {
        let n = self.assets;
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let l = &self.chol[k];
        let mut out = self.conditional_mean(r, k);
        for i in 0..n {
            out[i] += (0..=i).map(|j| l[i * n + j] * z[j]).sum::<f64>();
        }
        out
    }

    /// Per-asset innovation standard deviation in regime `k`.
    pub fn volatility(&self, k: usize) -> Vec<f64> {
        (0..self.assets)
            .map(|i| self.covariances[k][i * self.assets + i].sqrt())
            .collect()
    }

    pub fn stationary(&self) -> Vec<f64> {
        stationary_distribution(&self.transition, self.regimes)
    }
}

fn cholesky_psd(c: &[f64], n: usize) -> Result<Vec<f64>> {
    for i in 0..n {
        for j in 0..i {
            if (c[i * n + j] - c[j * n + i]).abs() > 1e-12 {
                return Err(Error::Config("covariance matrix is not symmetric".into()));
            }
        }
    }
    let scale = (0..n)
        .map(|i| c[i * n + i].abs())
        .fold(0.0, f64::max)
        .max(1e-300);
    let tol = 1e-12 * scale;
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let d = c[j * n + j] - (0..j).map(|k| l[j * n + k] * l[j * n + k]).sum::<f64>();
        if d < -tol {
            return Err(Error::Config(
                "covariance matrix is not positive semidefinite".into(),
            ));
        }
        let ljj = d.max(0.0).sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let v = c[i * n + j] - (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum::<f64>();
            if ljj > tol.sqrt() {
                l[i * n + j] = v / ljj;
            } else if v.abs() > tol.sqrt() {
                return Err(Error::Config(
                    "covariance matrix is not positive semidefinite".into(),
                ));
            }
        }
    }
    Ok(l)
}

/// Stationary law of a row-stochastic matrix by power iteration on the lazy
/// chain `(I + Q) / 2`, started from the uniform law.
pub fn stationary_distribution(transition: &[f64], k: usize) -> Vec<f64> {
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..1_000_000 {
        let mut next = vec![0.0; k];
        for i in 0..k {
            for j in 0..k {
                next[j] += pi[i] * transition[i * k + j];
            }
        }
        let next: Vec<f64> = next.iter().zip(&pi).map(|(a, b)| 0.5 * (a + b)).collect();
        let diff = next
            .iter()
            .zip(&pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        pi = next;
        if diff < 1e-16 {
            break;
        }
    }
    let total: f64 = pi.iter().sum();
    pi.iter().map(|p| p / total).collect()
}

/// One simulator step: returns use the current regime, then the regime moves.
pub fn rs_var_step(
    model: &RegimeVarModel,
    r: &[f64],
    k: usize,
    rng: &mut Rng,
) -> (Vec<f64>, usize) {
    let next = model.sample_returns(r, k, rng);
    let k_next = rng.categorical(model.transition_row(k));
    (next, k_next)
}

/// Scale applied to log returns before they enter the network.
pub const RETURN_FEATURE_SCALE: f64 = 20.0;

/// Simulated market with `assets` risky sleeves plus cash (last action slot).
#[derive(Clone, Debug)]
pub struct RsVarEnv {
    model: RegimeVarModel,
    cost: f64,
    reward_scale: f64,
    horizon: usize,
    state: Option<MarketState>,
}

impl RsVarEnv {
    pub fn new(
        model: RegimeVarModel,
        cost: f64,
        reward_scale: f64,
        horizon: usize,
    ) -> Result<Self> {
        if !(cost >= 0.0) {
            return Err(Error::Config(format!(
                "cost rate {cost} must be nonnegative"
            )));
        }
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        Ok(Self {
            model,
            cost,
            reward_scale,
            horizon,
            state: None,
        })
    }

    pub fn model(&self) -> &RegimeVarModel {
        &self.model
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn reward_scale(&self) -> f64 {
        self.reward_scale
    }

    /// Network input for `(w_prev, r_t, k_t)`.
    pub fn features_of(&self, prev_weights: &[f64], returns: &[f64], regime: usize) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.feature_dim());
        f.extend_from_slice(prev_weights);
        f.extend(returns.iter().map(|r| r * RETURN_FEATURE_SCALE));
        f.extend((0..self.model.regimes).map(|k| f64::from(k == regime)));
        f
    }

    /// Applies `action` from pre-trade weights `prev` and realised log returns
    /// `next_returns`: returns `(reward, post-return drifted weights, net growth)`.
    pub fn transact(
        &self,
        prev: &[f64],
        action: &[f64],
        next_returns: &[f64],
    ) -> (f64, Vec<f64>, f64) {
        let turnover: f64 = action.iter().zip(prev).map(|(a, b)| (a - b).abs()).sum();
        let charge = self.cost * 0.5 * turnover;
        let n = self.model.assets;
        let gross: Vec<f64> = next_returns
            .iter()
            .map(|r| r.exp())
            .chain(std::iter::once(self.model.rf))
            .collect();
        let port: f64 = action.iter().zip(&gross).map(|(w, g)| w * g).sum();
        let drifted: Vec<f64> = action
            .iter()
            .zip(&gross)
            .map(|(w, g)| w * g / port)
            .collect();
        debug_assert_eq!(drifted.len(), n + 1);
        (
            self.reward_scale * (port - 1.0 - charge),
            drifted,
            port - charge,
        )
    }

    pub fn state_from(
        &self,
        prev_weights: Vec<f64>,
        returns: Vec<f64>,
        regime: usize,
        step: usize,
    ) -> MarketState {
        MarketState {
            wealth: 1.0,
            shares: Vec::new(),
            balance: 0.0,
            exogenous: returns,
            regime: Some(regime),
            step,
            prev_weights,
        }
    }
}

impl Environment for RsVarEnv {
    fn reset(&mut self, rng: &mut Rng) -> Result<MarketState> {
        let k = rng.categorical(&self.model.stationary());
        let n = self.model.assets;
        let r0 = self.model.drifts[k].clone();
        let s = self.state_from(vec![1.0 / (n + 1) as f64; n + 1], r0, k, 0);
        self.state = Some(s.clone());
        Ok(s)
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult> {
        check_simplex(action, self.model.assets + 1, 1e-9)?;
        let s = self
            .state
            .take()
            .ok_or_else(|| Error::Config("step called before reset".into()))?;
        let k = s.regime.unwrap_or(0);
        let (r_next, k_next) = rs_var_step(&self.model, &s.exogenous, k, rng);
        let (reward, drifted, growth) = self.transact(&s.prev_weights, action, &r_next);
        let mut next = self.state_from(drifted, r_next, k_next, s.step + 1);
        next.wealth = s.wealth * growth;
        let done = next.step >= self.horizon;
        self.state = Some(next.clone());
        Ok(StepResult {
            state: next,
            reward,
            done,
        })
    }

    fn features(&self, state: &MarketState) -> Vec<f64> {
        self.features_of(
            &state.prev_weights,
            &state.exogenous,
            state.regime.unwrap_or(0),
        )
    }

    fn feature_dim(&self) -> usize {
        2 * self.model.assets + 1 + self.model.regimes
    }

    fn action_dim(&self) -> usize {
        self.model.assets + 1
    }

    fn action_labels(&self) -> Vec<String> {
        let mut v: Vec<String> = (1..=self.model.assets)
            .map(|i| format!("asset{i}"))
            .collect();
        v.push("cash".into());
        v
    }

    fn state_label(&self, state: &MarketState) -> String {
        let k = state.regime.unwrap_or(0);
        REGIME_LABELS.get(k).map_or_else(|| k.to_string(), |s| s.to_string())
    }
}
