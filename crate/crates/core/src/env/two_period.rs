use serde::{Deserialize, Serialize};

use super::{check_simplex, Environment, MarketState, StepResult};
use crate::error::{Error, Result};
use crate::mathcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    Low = 0,
    High = 1,
}

impl Regime {
    pub const ALL: [Regime; 2] = [Regime::Low, Regime::High];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Regime {
        if i == 0 {
            Regime::Low
        } else {
            Regime::High
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::Low => "L",
            Regime::High => "H",
        }
    }
}

/// One risky asset with i.i.d. normal gross returns whose volatility follows
/// a two-state Markov chain, plus a risk-free asset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPeriodRegimeModel {
    pub rf: f64,
    pub mu: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub p_ll: f64,
    pub p_hh: f64,
    pub beta: f64,
    pub w0: f64,
}

impl Default for TwoPeriodRegimeModel {
    fn default() -> Self {
        Self {
            rf: 1.04,
            mu: 1.1,
            sigma_low: 0.03,
            sigma_high: 1.7 * 0.03,
            p_ll: 0.7,
            p_hh: 0.7,
            beta: 0.96,
            w0: 1.0,
        }
    }
}

impl TwoPeriodRegimeModel {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rf,
            self.mu,
            self.sigma_low,
            self.sigma_high,
            self.beta,
            self.w0,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config(
                "regime model parameters must be finite".into(),
            ));
        }
        if !(self.sigma_low > 0.0 && self.sigma_high > self.sigma_low) {
            return Err(Error::Config(format!(
                "need 0 < sigma_low < sigma_high, got {} and {}",
                self.sigma_low, self.sigma_high
            )));
        }
        for p in [self.p_ll, self.p_hh] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("persistence {p} outside [0, 1]")));
            }
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::Config(format!("beta {} outside (0, 1)", self.beta)));
        }
        if !(self.rf > 0.0 && self.w0 > 0.0) {
            return Err(Error::Config(
                "risk-free rate and initial wealth must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn sigma(&self, z: Regime) -> f64 {
        match z {
            Regime::Low => self.sigma_low,
            Regime::High => self.sigma_high,
        }
    }

    /// `[P(z' = L | z), P(z' = H | z)]`.
    pub fn transition_row(&self, z: Regime) -> [f64; 2] {
        match z {
            Regime::Low => [self.p_ll, 1.0 - self.p_ll],
            Regime::High => [1.0 - self.p_hh, self.p_hh],
        }
    }

    pub fn stationary(&self) -> [f64; 2] {
        let out_l = 1.0 - self.p_ll;
        let out_h = 1.0 - self.p_hh;
        if out_l + out_h == 0.0 {
            return [0.5, 0.5];
        }
        [out_h / (out_l + out_h), out_l / (out_l + out_h)]
    }
}

/// Two decisions (t = 0, 1); the only reward is `scale * ln(W_2 / W_0)` at the end.
#[derive(Clone, Debug)]
pub struct TwoPeriodRegimeEnv {
    model: TwoPeriodRegimeModel,
    reward_scale: f64,
    start: Option<Regime>,
    state: Option<MarketState>,
}

const WEALTH_FEATURE_SCALE: f64 = 10.0;

impl TwoPeriodRegimeEnv {
    pub fn new(model: TwoPeriodRegimeModel, reward_scale: f64) -> Result<Self> {
        model.validate()?;
        Ok(Self {
            model,
            reward_scale,
            start: None,
            state: None,
        })
    }

    /// Fix the initial regime instead of drawing it from the stationary law.
    pub fn with_start(mut self, start: Option<Regime>) -> Self {
        self.start = start;
        self
    }

    pub fn model(&self) -> &TwoPeriodRegimeModel {
        &self.model
    }

    /// State at `t` in regime `z` with wealth `w`.
    pub fn state_at(&self, step: usize, z: Regime, wealth: f64) -> MarketState {
        MarketState {
            wealth,
            shares: Vec::new(),
            balance: 0.0,
            exogenous: Vec::new(),
            regime: Some(z.index()),
            step,
            prev_weights: Vec::new(),
        }
    }
}

impl Environment for TwoPeriodRegimeEnv {
    fn reset(&mut self, rng: &mut Rng) -> Result<MarketState> {
        let z = match self.start {
            Some(z) => z,
            None => Regime::from_index(rng.categorical(&self.model.stationary())),
        };
        let s = self.state_at(0, z, self.model.w0);
        self.state = Some(s.clone());
        Ok(s)
    }

    fn step(&mut self, action: &[f64], rng: &mut Rng) -> Result<StepResult> {
        check_simplex(action, 2, 1e-9)?;
        let s = self
            .state
            .take()
            .ok_or_else(|| Error::Config("step called before reset".into()))?;
        if s.step >= 2 {
            return Err(Error::Config("episode already finished".into()));
        }
        let z = Regime::from_index(s.regime.unwrap_or(0));
        let alpha = action[0];
        let r = self.model.mu + self.model.sigma(z) * rng.normal();
        let growth = alpha * r + (1.0 - alpha) * self.model.rf;
        if !(growth > 0.0) {
            return Err(Error::Numerical(format!(
                "non-positive portfolio gross return {growth}"
            )));
        }
        let wealth = s.wealth * growth;
        let z_next = Regime::from_index(rng.categorical(&self.model.transition_row(z)));
        let next = self.state_at(s.step + 1, z_next, wealth);
        let done = next.step == 2;
        let reward = if done {
            self.reward_scale * (wealth / self.model.w0).ln()
        } else {
            0.0
        };
        self.state = Some(next.clone());
        Ok(StepResult {
            state: next,
            reward,
            done,
        })
    }

    /// One-hot `(t, z)` cell followed by scaled log wealth.
    fn features(&self, state: &MarketState) -> Vec<f64> {
        let high = state.regime == Some(Regime::High.index());
        let cell = 2 * state.step.min(1) + usize::from(high);
        let mut f = vec![0.0; 5];
        f[cell] = 1.0;
        f[4] = WEALTH_FEATURE_SCALE * (state.wealth / self.model.w0).ln();
        f
    }

    fn feature_dim(&self) -> usize {
        5
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn action_labels(&self) -> Vec<String> {
        vec!["risky".into(), "cash".into()]
    }

    fn state_label(&self, state: &MarketState) -> String {
        Regime::from_index(state.regime.unwrap_or(0)).label().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let m = TwoPeriodRegimeModel::default();
        m.validate().unwrap();
        assert!((m.sigma_high - 0.051).abs() < 1e-15);
        let pi = m.stationary();
        assert!((pi[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_volatility_order() {
        let m = TwoPeriodRegimeModel {
            sigma_high: 0.01,
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn cash_only_episode_is_deterministic() {
        let mut env = TwoPeriodRegimeEnv::new(TwoPeriodRegimeModel::default(), 1.0).unwrap();
        let mut rng = Rng::new(3);
        env.reset(&mut rng).unwrap();
        let a = env.step(&[0.0, 1.0], &mut rng).unwrap();
        assert_eq!(a.reward, 0.0);
        assert!(!a.done);
        let b = env.step(&[0.0, 1.0], &mut rng).unwrap();
        assert!(b.done);
        assert!((b.reward - 2.0 * 1.04f64.ln()).abs() < 1e-12);
        assert!(env.step(&[0.0, 1.0], &mut rng).is_err());
    }

    #[test]
    fn absorbing_start_regime() {
        let model = TwoPeriodRegimeModel {
            p_hh: 1.0,
            ..Default::default()
        };
        let mut env = TwoPeriodRegimeEnv::new(model, 1.0)
            .unwrap()
            .with_start(Some(Regime::High));
        let mut rng = Rng::new(4);
        for _ in 0..50 {
            let s = env.reset(&mut rng).unwrap();
            assert_eq!(s.regime, Some(1));
            let n = env.step(&[0.5, 0.5], &mut rng).unwrap();
            assert_eq!(n.state.regime, Some(1));
        }
    }
}
