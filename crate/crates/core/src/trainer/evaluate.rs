use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::actor::ActorParams;
use crate::critic::CriticParams;
use crate::env::{Environment, Regime, TwoPeriodRegimeEnv};
use crate::error::{Error, Result};
use crate::mathcore::Rng;
use crate::metrics::{crossing_stats, csv_err, format_value, icdf_report, CrossingStats};

/// One decision: the state it was taken in, the weights and what followed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub path: usize,
    pub step: usize,
    pub label: String,
    pub regime: Option<usize>,
    pub weights: Vec<f64>,
    pub reward: f64,
    /// Wealth after the step.
    pub wealth: f64,
    /// Simple return of the step, `W_{t+1} / W_t - 1`.
    pub period_return: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub rows: Vec<TrajectoryRow>,
    /// Network inputs at every decision point.
    pub states: Vec<Vec<f64>>,
    pub action_labels: Vec<String>,
}

impl Rollout {
    pub fn returns(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.period_return).collect()
    }

    pub fn weights(&self) -> Vec<Vec<f64>> {
        self.rows.iter().map(|r| r.weights.clone()).collect()
    }

    /// Regime per row when every row has one.
    pub fn regimes(&self) -> Option<Vec<usize>> {
        self.rows.iter().map(|r| r.regime).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["path".to_string(), "step".into(), "label".into(), "regime".into()];
        header.extend(self.action_labels.iter().map(|l| format!("w_{l}")));
        header.extend(["reward".to_string(), "wealth".into(), "return".into()]);
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            let mut rec = vec![
                r.path.to_string(),
                r.step.to_string(),
                r.label.clone(),
                r.regime.map_or(String::new(), |k| k.to_string()),
            ];
            rec.extend(r.weights.iter().map(|x| x.to_string()));
            rec.extend([r.reward.to_string(), r.wealth.to_string(), r.period_return.to_string()]);
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `paths` episodes of `env` choosing weights with `policy`. Episodes
/// end when the environment says so or after `max_steps` (if positive).
pub fn rollout_policy(
    env: &mut dyn Environment,
    policy: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    paths: usize,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<Rollout> {
    let mut rows = Vec::new();
    let mut states = Vec::new();
    for path in 0..paths {
        let mut state = env.reset(rng)?;
        loop {
            let feats = env.features(&state);
            let weights = policy(&feats)?;
            let res = env.step(&weights, rng)?;
            let period_return = res.state.wealth / state.wealth - 1.0;
            rows.push(TrajectoryRow {
                path,
                step: state.step,
                label: env.state_label(&state),
                regime: state.regime,
                weights,
                reward: res.reward,
                wealth: res.state.wealth,
                period_return,
            });
            states.push(feats);
            let n = rows.iter().rev().take_while(|r| r.path == path).count();
            if res.done || (max_steps > 0 && n >= max_steps) {
                break;
            }
            state = res.state;
        }
    }
    Ok(Rollout {
        rows,
        states,
        action_labels: env.action_labels(),
    })
}

/// Deterministic evaluation with the distribution-mean action.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub rollout: Rollout,
    pub levels: Vec<f64>,
    /// Critic heads averaged over visited states.
    pub icdf: Vec<f64>,
    pub crossing: CrossingStats,
}

impl Evaluation {
    pub fn write_icdf_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_icdf_csv(&self.levels, &self.icdf, writer)
    }
}

pub fn write_icdf_csv<W: Write>(levels: &[f64], values: &[f64], writer: W) -> Result<()> {
    if levels.len() != values.len() {
        return Err(Error::Shape {
            expected: levels.len(),
            got: values.len(),
        });
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["level", "value"]).map_err(csv_err)?;
    for (l, v) in levels.iter().zip(values) {
        w.write_record([l.to_string(), format_value(*v)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn evaluate(
    actor: &ActorParams,
    critic: &CriticParams,
    env: &mut dyn Environment,
    paths: usize,
    max_steps: usize,
    rng: &mut Rng,
) -> Result<Evaluation> {
    let mut policy = |f: &[f64]| actor.mean_action(f);
    let rollout = rollout_policy(env, &mut policy, paths, max_steps, rng)?;
    let heads = rollout
        .states
        .iter()
        .map(|s| critic.value_vector(s))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation {
        icdf: icdf_report(critic, &rollout.states)?,
        crossing: crossing_stats(&heads)?,
        levels: critic.grid.levels().to_vec(),
        rollout,
    })
}

/// Mean risky share chosen at `t = 0, 1` in each regime (`[t][L, H]`), with
/// wealth at its initial level.
pub fn two_period_allocations(actor: &ActorParams, env: &TwoPeriodRegimeEnv) -> Result<[[f64; 2]; 2]> {
    let mut out = [[0.0; 2]; 2];
    for (t, row) in out.iter_mut().enumerate() {
        for z in Regime::ALL {
            let s = env.state_at(t, z, env.model().w0);
            row[z.index()] = actor.mean_action(&env.features(&s))?[0];
        }
    }
    Ok(out)
}

pub fn write_allocations_csv<W: Write>(alloc: &[[f64; 2]; 2], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["t", "regime", "alpha"]).map_err(csv_err)?;
    for (t, row) in alloc.iter().enumerate() {
        for z in Regime::ALL {
            w.write_record([t.to_string(), z.label().to_string(), row[z.index()].to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actor::PolicyHead;
    use crate::env::TwoPeriodRegimeModel;

    #[test]
    fn two_step_episodes_compound() {
        let mut env = TwoPeriodRegimeEnv::new(TwoPeriodRegimeModel::default(), 1.0).unwrap();
        let mut cash = |_: &[f64]| Ok(vec![0.0, 1.0]);
        let r = rollout_policy(&mut env, &mut cash, 3, 0, &mut Rng::new(1)).unwrap();
        assert_eq!(r.rows.len(), 6);
        for row in &r.rows {
            assert!((row.period_return - 0.04).abs() < 1e-12);
        }
        assert!((r.rows[1].wealth - 1.04f64.powi(2)).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("path,step,label,regime,w_risky,w_cash,reward,wealth,return"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn allocations_read_the_mean_action() {
        let env = TwoPeriodRegimeEnv::new(TwoPeriodRegimeModel::default(), 1.0).unwrap();
        let mut actor =
            ActorParams::new(5, &[4], 2, PolicyHead::Gaussian { sigma: 0.5 }, 0.0, &mut Rng::new(2)).unwrap();
        let last = actor.net.layers.len() - 1;
        actor.net.layers[last].weights.iter_mut().for_each(|w| *w = 0.0);
        actor.net.layers[last].bias = vec![0.0, 0.0];
        let a = two_period_allocations(&actor, &env).unwrap();
        assert!(a.iter().flatten().all(|x| (x - 0.5).abs() < 1e-12));
    }
}
