//! Episodic on-policy actor-critic training and the regime-enumerating
//! model-based variant.

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::actor::{actor_loss, ActorBatch, ActorParams};
use crate::critic::{batch_td_errors, critic_loss, CriticBatch, CriticParams};
use crate::env::{Environment, RegimeVarModel, RsVarEnv};
use crate::error::{Error, Result};
use crate::mathcore::{LrSchedule, MlpGrads, Rng};
use crate::quantile_dp::QuantileGrid;

/// RNG stream identifiers derived from the run seed.
pub(crate) const STREAM_INIT: u64 = 1;
pub(crate) const STREAM_ROLLOUT: u64 = 2;
pub(crate) const STREAM_VALIDATION: u64 = 3;
pub(crate) const STREAM_EVAL: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub mean_reward: f64,
    pub transitions: usize,
    pub val_critic_loss: Option<f64>,
    pub val_actor_loss: Option<f64>,
    pub val_stat: Option<f64>,
    pub best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunHistory {
    pub records: Vec<EpisodeRecord>,
    /// Episode whose parameters are returned as "best".
    pub best_episode: usize,
    pub stopped_early: bool,
}

impl RunHistory {
    pub const HEADER: [&'static str; 11] = [
        "episode",
        "critic_loss",
        "actor_loss",
        "critic_lr",
        "actor_lr",
        "mean_reward",
        "transitions",
        "val_critic_loss",
        "val_actor_loss",
        "val_stat",
        "best",
    ];

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::HEADER).map_err(crate::metrics::csv_err)?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.records {
            w.write_record([
                r.episode.to_string(),
                r.critic_loss.to_string(),
                r.actor_loss.to_string(),
                r.critic_lr.to_string(),
                r.actor_lr.to_string(),
                r.mean_reward.to_string(),
                r.transitions.to_string(),
                opt(r.val_critic_loss),
                opt(r.val_actor_loss),
                opt(r.val_stat),
                u8::from(r.best).to_string(),
            ])
            .map_err(crate::metrics::csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Result of a run. On divergence `divergence` carries the reason and the
/// parameters are the last finite ones.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub actor: ActorParams,
    pub critic: CriticParams,
    pub last_actor: ActorParams,
    pub last_critic: CriticParams,
    pub history: RunHistory,
    pub divergence: Option<String>,
}

/// On-policy transitions gathered under one parameter vector.
#[derive(Clone, Debug)]
pub struct Buffer {
    pub critic: CriticBatch,
    pub actions: Vec<f64>,
    pub action_dim: usize,
}

impl Buffer {
    pub fn new(dim: usize, action_dim: usize) -> Self {
        Self {
            critic: CriticBatch::new(dim),
            actions: Vec::new(),
            action_dim,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        features: &[f64],
        raw_action: &[f64],
        reward: f64,
        next_features: &[f64],
        terminal: bool,
        weight: f64,
    ) {
        self.critic.push(features, reward, next_features, terminal, weight);
        self.actions.extend_from_slice(raw_action);
    }

    pub fn len(&self) -> usize {
        self.critic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.critic.is_empty()
    }

    pub fn clear(&mut self) {
        let (dim, a) = (self.critic.dim, self.action_dim);
        *self = Self::new(dim, a);
    }

    /// Weighted mean reward.
    pub fn mean_reward(&self) -> f64 {
        let w: f64 = self.critic.weights.iter().sum();
        if w > 0.0 {
            self.critic
                .rewards
                .iter()
                .zip(&self.critic.weights)
                .map(|(r, q)| r * q)
                .sum::<f64>()
                / w
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Actor, critic and their learning-rate schedules.
#[derive(Clone, Debug)]
pub struct Learner {
    pub actor: ActorParams,
    pub critic: CriticParams,
    critic_lr: LrSchedule,
    actor_lr: LrSchedule,
    beta: f64,
    tau: f64,
    td_scale: f64,
    actor_td_scaled: bool,
    critic_steps: usize,
    actor_steps: usize,
    max_grad_norm: f64,
    pub updates: usize,
}

impl Learner {
    pub fn new(cfg: &TrainConfig, feature_dim: usize, action_dim: usize, total_updates: usize) -> Result<Self> {
        let mut rng = Rng::new(cfg.seed).derive(STREAM_INIT);
        let grid = QuantileGrid::regular(cfg.quantiles, cfg.tau)?;
        let critic = CriticParams::new(
            feature_dim,
            &cfg.hidden,
            grid,
            cfg.weight_decay,
            cfg.order_penalty,
            cfg.rho,
            &mut rng,
        )?;
        let mut actor = ActorParams::new(
            feature_dim,
            &cfg.hidden,
            action_dim,
            cfg.policy_head(),
            cfg.weight_decay,
            &mut rng,
        )?;
        actor.entropy_coef = cfg.entropy_coef;
        actor.surrogate = cfg.surrogate;
        actor.literal_sign = cfg.literal_sign;
        Ok(Self::from_params(actor, critic, cfg, total_updates))
    }

    pub fn from_params(actor: ActorParams, critic: CriticParams, cfg: &TrainConfig, total_updates: usize) -> Self {
        let steps = total_updates.max(1);
        Self {
            actor,
            critic,
            critic_lr: LrSchedule {
                start: cfg.critic_lr_start,
                end: cfg.critic_lr_end,
                power: cfg.critic_decay,
                total_steps: steps,
            },
            actor_lr: LrSchedule {
                start: cfg.actor_lr_start,
                end: cfg.actor_lr_end,
                power: cfg.actor_decay,
                total_steps: steps,
            },
            beta: cfg.beta,
            tau: cfg.tau,
            td_scale: cfg.td_scale,
            actor_td_scaled: cfg.actor_td_scaled,
            critic_steps: cfg.critic_steps,
            actor_steps: cfg.actor_steps,
            max_grad_norm: cfg.max_grad_norm,
            updates: 0,
        }
    }

    pub fn rates(&self) -> (f64, f64) {
        (self.critic_lr.rate(self.updates), self.actor_lr.rate(self.updates))
    }

    fn clip(&self, grads: &mut MlpGrads) {
        if self.max_grad_norm > 0.0 {
            let n = grads.norm();
            if n > self.max_grad_norm {
                grads.scale(self.max_grad_norm / n);
            }
        }
    }

    /// TD errors at the target head, as fed to the actor.
    pub fn actor_deltas(&self, buffer: &Buffer) -> Result<Vec<f64>> {
        let p = self.critic.heads();
        let j = self.critic.grid.target_index();
        let all = batch_td_errors(&self.critic, &buffer.critic, self.beta, self.td_scale)?;
        let div = if self.actor_td_scaled { 1.0 } else { self.td_scale };
        Ok(all.chunks(p).map(|row| row[j] / div).collect())
    }

    fn actor_batch(&self, buffer: &Buffer) -> Result<ActorBatch> {
        Ok(ActorBatch {
            dim: buffer.critic.dim,
            action_dim: buffer.action_dim,
            features: buffer.critic.features.clone(),
            actions: buffer.actions.clone(),
            deltas: self.actor_deltas(buffer)?,
            weights: buffer.critic.weights.clone(),
        })
    }

    /// Losses on a buffer without changing any parameter.
    pub fn evaluate_losses(&self, buffer: &Buffer) -> Result<UpdateStats> {
        let c = critic_loss(&self.critic, &buffer.critic, self.beta, self.td_scale)?;
        let a = actor_loss(&self.actor, &self.actor_batch(buffer)?, self.tau)?;
        Ok(UpdateStats {
            critic_loss: c.loss,
            actor_loss: a.loss,
        })
    }

    /// Critic steps (each followed by a soft target update), then actor
    /// steps against the refreshed critic.
    pub fn update(&mut self, buffer: &Buffer) -> Result<UpdateStats> {
        let (lr_c, lr_a) = self.rates();
        let mut stats = UpdateStats::default();
        for _ in 0..self.critic_steps {
            let mut out = critic_loss(&self.critic, &buffer.critic, self.beta, self.td_scale)?;
            self.clip(&mut out.grads);
            self.critic.online.apply_gradient(&out.grads, lr_c);
            self.critic.soft_update();
            stats.critic_loss = out.loss;
        }
        if self.actor_steps > 0 {
            let batch = self.actor_batch(buffer)?;
            for _ in 0..self.actor_steps {
                let mut out = actor_loss(&self.actor, &batch, self.tau)?;
                self.clip(&mut out.grads);
                self.actor.net.apply_gradient(&out.grads, lr_a);
                stats.actor_loss = out.loss;
            }
        }
        self.updates += 1;
        if !self.critic.online.is_finite() || !self.critic.target.is_finite() || !self.actor.net.is_finite() {
            return Err(Error::Numerical("parameters became non-finite".into()));
        }
        Ok(stats)
    }
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Numerical(_) | Error::Domain(_))
}

/// Rolls out one episode under the current policy, calling `learner.update`
/// every `update_every` steps when that is positive. Returns the sum of
/// rewards and the number of steps.
fn run_episode(
    env: &mut dyn Environment,
    learner: &mut Learner,
    buffer: &mut Buffer,
    rng: &mut Rng,
    update_every: usize,
    max_steps: usize,
    acc: &mut Accumulator,
) -> Result<()> {
    let mut state = env.reset(rng)?;
    let mut feats = env.features(&state);
    let mut steps = 0usize;
    loop {
        let a = learner.actor.act(&feats, rng)?;
        let res = env.step(&a.weights, rng)?;
        let next = env.features(&res.state);
        steps += 1;
        buffer.push(&feats, &a.raw, res.reward, &next, res.done, 1.0);
        acc.reward += res.reward;
        acc.transitions += 1;
        if update_every > 0 && buffer.len() >= update_every {
            acc.add(learner.update(buffer)?);
            buffer.clear();
        }
        if res.done || (max_steps > 0 && steps >= max_steps) {
            break;
        }
        state = res.state;
        feats = next;
    }
    let _ = state;
    Ok(())
}

#[derive(Default)]
struct Accumulator {
    reward: f64,
    transitions: usize,
    critic: f64,
    actor: f64,
    updates: usize,
}

impl Accumulator {
    fn add(&mut self, s: UpdateStats) {
        self.critic += s.critic_loss;
        self.actor += s.actor_loss;
        self.updates += 1;
    }

    fn mean(&self, v: f64) -> f64 {
        if self.updates > 0 {
            v / self.updates as f64
        } else {
            f64::NAN
        }
    }
}

/// Steps in one episode of `env`, counted by a dry run with the uniform
/// portfolio (used only to size the learning-rate schedule).
fn episode_length(env: &mut dyn Environment, max_steps: usize) -> Result<usize> {
    let mut rng = Rng::new(0);
    env.reset(&mut rng)?;
    let a = vec![1.0 / env.action_dim() as f64; env.action_dim()];
    let mut n = 0;
    loop {
        let r = env.step(&a, &mut rng)?;
        n += 1;
        if r.done || (max_steps > 0 && n >= max_steps) || n > 10_000_000 {
            return Ok(n);
        }
    }
}

struct BestTracker {
    stat: f64,
    since: usize,
    actor: ActorParams,
    critic: CriticParams,
    episode: usize,
}

/// Algorithm: for each episode, `iterations_per_episode` times collect
/// `paths_per_episode` on-policy rollouts and update; evaluate on the
/// validation environment every `eval_every` episodes and stop early once
/// `min_epochs` have passed without improvement for `patience` evaluations.
pub fn train(
    env: &mut dyn Environment,
    mut validation: Option<&mut dyn Environment>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let len = episode_length(env, cfg.max_episode_steps)?;
    let per_iteration = if cfg.update_every > 0 {
        (len * cfg.paths_per_episode).div_ceil(cfg.update_every)
    } else {
        1
    };
    let total = cfg.total_iterations() * per_iteration;
    let mut learner = Learner::new(cfg, env.feature_dim(), env.action_dim(), total)?;
    let mut rng = Rng::new(cfg.seed).derive(STREAM_ROLLOUT);
    let mut history = RunHistory::default();
    let mut best: Option<BestTracker> = None;
    let mut last_good = (learner.actor.clone(), learner.critic.clone());
    let mut divergence = None;

    'episodes: for episode in 1..=cfg.episodes {
        let mut acc = Accumulator::default();
        let (lr_c, lr_a) = learner.rates();
        for _ in 0..cfg.iterations_per_episode {
            let mut buffer = Buffer::new(env.feature_dim(), env.action_dim());
            let step = (|| -> Result<()> {
                for _ in 0..cfg.paths_per_episode {
                    run_episode(
                        env,
                        &mut learner,
                        &mut buffer,
                        &mut rng,
                        cfg.update_every,
                        cfg.max_episode_steps,
                        &mut acc,
                    )?;
                }
                if !buffer.is_empty() {
                    acc.add(learner.update(&buffer)?);
                }
                Ok(())
            })();
            if let Err(e) = step {
                if is_divergence(&e) {
                    divergence = Some(format!("episode {episode}: {e}"));
                    break 'episodes;
                }
                return Err(e);
            }
            last_good = (learner.actor.clone(), learner.critic.clone());
        }
        let mut record = EpisodeRecord {
            episode,
            critic_loss: acc.mean(acc.critic),
            actor_loss: acc.mean(acc.actor),
            critic_lr: lr_c,
            actor_lr: lr_a,
            mean_reward: if acc.transitions > 0 {
                acc.reward / acc.transitions as f64
            } else {
                0.0
            },
            transitions: acc.transitions,
            val_critic_loss: None,
            val_actor_loss: None,
            val_stat: None,
            best: false,
        };
        let mut stop = false;
        if let Some(val) = validation.as_deref_mut() {
            if episode % cfg.eval_every == 0 {
                let mut vrng = Rng::new(cfg.seed).derive(STREAM_VALIDATION);
                let mut buffer = Buffer::new(val.feature_dim(), val.action_dim());
                let mut vacc = Accumulator::default();
                let mut frozen = learner.clone();
                let stats = run_episode(val, &mut frozen, &mut buffer, &mut vrng, 0, cfg.max_episode_steps, &mut vacc)
                    .and_then(|_| learner.evaluate_losses(&buffer));
                match stats {
                    Ok(s) => {
                        let stat = s.critic_loss + s.actor_loss.abs();
                        record.val_critic_loss = Some(s.critic_loss);
                        record.val_actor_loss = Some(s.actor_loss);
                        record.val_stat = Some(stat);
                        let improved = best.as_ref().is_none_or(|b| stat < b.stat);
                        if improved {
                            best = Some(BestTracker {
                                stat,
                                since: 0,
                                actor: learner.actor.clone(),
                                critic: learner.critic.clone(),
                                episode,
                            });
                            record.best = true;
                        } else if let Some(b) = best.as_mut() {
                            b.since += 1;
                            if episode >= cfg.min_epochs && b.since >= cfg.patience {
                                stop = true;
                            }
                        }
                    }
                    Err(e) if is_divergence(&e) => {
                        history.records.push(record);
                        divergence = Some(format!("validation at episode {episode}: {e}"));
                        break 'episodes;
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        if !record.critic_loss.is_finite() && acc.updates > 0 {
            history.records.push(record);
            divergence = Some(format!("episode {episode}: non-finite critic loss"));
            break;
        }
        history.records.push(record);
        if stop {
            history.stopped_early = true;
            break;
        }
    }

    let (last_actor, last_critic) = last_good;
    let had_best = best.is_some();
    let (actor, critic, best_episode) = match best {
        Some(b) => (b.actor, b.critic, b.episode),
        None => (last_actor.clone(), last_critic.clone(), history.records.len()),
    };
    history.best_episode = best_episode;
    if !had_best {
        if let Some(r) = history.records.last_mut() {
            r.best = true;
        }
    }
    Ok(TrainOutcome {
        actor,
        critic,
        last_actor,
        last_critic,
        history,
        divergence,
    })
}

/// State grid for the model-based buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct RsVarGrid {
    pub prev_weights: Vec<Vec<f64>>,
    pub returns: Vec<Vec<f64>>,
}

/// Lattice points `m / (per_coord - 1)` of the simplex of dimension `dim`.
pub fn simplex_lattice(dim: usize, per_coord: usize) -> Vec<Vec<f64>> {
    let m = per_coord.saturating_sub(1).max(1);
    let mut out = Vec::new();
    let mut current = vec![0usize; dim];
    fn rec(pos: usize, left: usize, m: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.iter().map(|c| *c as f64 / m as f64).collect());
            return;
        }
        for c in 0..=left {
            cur[pos] = c;
            rec(pos + 1, left - c, m, cur, out);
        }
    }
    rec(0, m, m, &mut current, &mut out);
    out
}

impl RsVarGrid {
    /// `grid_w` points per weight coordinate on the simplex (cash included)
    /// and `grid_r` points per return coordinate spanning two standard
    /// deviations around the stationary mean of the drift mixture.
    pub fn new(model: &RegimeVarModel, grid_w: usize, grid_r: usize) -> Self {
        let n = model.assets;
        let pi = model.stationary();
        let mut center = vec![0.0; n];
        let mut var = vec![0.0; n];
        for k in 0..model.regimes {
            let vol = model.volatility(k);
            for i in 0..n {
                center[i] += pi[k] * model.drifts[k][i];
                var[i] += pi[k] * vol[i] * vol[i];
            }
        }
        let axis: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                if grid_r == 1 {
                    vec![center[i]]
                } else {
                    let sd = var[i].sqrt();
                    (0..grid_r)
                        .map(|g| center[i] - 2.0 * sd + 4.0 * sd * g as f64 / (grid_r - 1) as f64)
                        .collect()
                }
            })
            .collect();
        let mut returns = vec![Vec::new()];
        for values in &axis {
            returns = returns
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push(*v);
                        p
                    })
                })
                .collect();
        }
        Self {
            prev_weights: simplex_lattice(n + 1, grid_w),
            returns,
        }
    }

    pub fn states(&self, regimes: usize) -> usize {
        self.prev_weights.len() * self.returns.len() * regimes
    }
}

/// Builds the regime-enumerated buffer: for each grid state one action is
/// sampled, then every next regime `k'` gets its own return draw and weight
/// `Q[k][k']`.
pub fn model_based_buffer(env: &RsVarEnv, grid: &RsVarGrid, actor: &ActorParams, rng: &mut Rng) -> Result<Buffer> {
    let model = env.model();
    let dim = env.feature_dim();
    let mut buffer = Buffer::new(dim, env.action_dim());
    for w in &grid.prev_weights {
        for r in &grid.returns {
            for k in 0..model.regimes {
                let f = env.features_of(w, r, k);
                let a = actor.act(&f, rng)?;
                for (k_next, q) in model.transition_row(k).iter().enumerate() {
                    let r_next = model.sample_returns(r, k, rng);
                    let (reward, drifted, _) = env.transact(w, &a.weights, &r_next);
                    let nf = env.features_of(&drifted, &r_next, k_next);
                    buffer.push(&f, &a.raw, reward, &nf, false, *q);
                }
            }
        }
    }
    Ok(buffer)
}

/// Model-based training on a known regime-switching VAR.
pub fn train_model_based(mut model: RegimeVarModel, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.rf = cfg.rf;
    let env = RsVarEnv::new(model, cfg.cost, cfg.reward_scale, cfg.eval_steps)?;
    let grid = RsVarGrid::new(env.model(), cfg.grid_w, cfg.grid_r);
    let mut learner = Learner::new(cfg, env.feature_dim(), env.action_dim(), cfg.total_iterations())?;
    let mut rng = Rng::new(cfg.seed).derive(STREAM_ROLLOUT);
    let mut history = RunHistory::default();
    let mut last_good = (learner.actor.clone(), learner.critic.clone());
    let mut divergence = None;
    'episodes: for episode in 1..=cfg.episodes {
        let mut acc = Accumulator::default();
        let (lr_c, lr_a) = learner.rates();
        for _ in 0..cfg.iterations_per_episode {
            let step = model_based_buffer(&env, &grid, &learner.actor, &mut rng).and_then(|buffer| {
                acc.reward += buffer.mean_reward() * buffer.len() as f64;
                acc.transitions += buffer.len();
                learner.update(&buffer)
            });
            match step {
                Ok(s) => acc.add(s),
                Err(e) if is_divergence(&e) => {
                    divergence = Some(format!("episode {episode}: {e}"));
                    break 'episodes;
                }
                Err(e) => return Err(e),
            }
            last_good = (learner.actor.clone(), learner.critic.clone());
        }
        history.records.push(EpisodeRecord {
            episode,
            critic_loss: acc.mean(acc.critic),
            actor_loss: acc.mean(acc.actor),
            critic_lr: lr_c,
            actor_lr: lr_a,
            mean_reward: acc.reward / acc.transitions.max(1) as f64,
            transitions: acc.transitions,
            val_critic_loss: None,
            val_actor_loss: None,
            val_stat: None,
            best: false,
        });
    }
    history.best_episode = history.records.len();
    if let Some(r) = history.records.last_mut() {
        r.best = true;
    }
    let (last_actor, last_critic) = last_good;
    Ok(TrainOutcome {
        actor: last_actor.clone(),
        critic: last_critic.clone(),
        last_actor,
        last_critic,
        history,
        divergence,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{MarketState, Scenario, StepResult};
    use crate::trainer::config::EnvKind;

    #[test]
    fn lattice_sizes() {
        let l = simplex_lattice(3, 5);
        assert_eq!(l.len(), 15);
        assert!(l.iter().all(|w| (w.iter().sum::<f64>() - 1.0).abs() < 1e-12));
        assert_eq!(simplex_lattice(2, 2).len(), 2);
        let g = RsVarGrid::new(&RegimeVarModel::preset(Scenario::BullBear), 5, 5);
        assert_eq!(g.states(3), 15 * 25 * 3);
    }

    #[test]
    fn identity_transition_weights_are_binary() {
        let mut m = RegimeVarModel::preset(Scenario::BullBear);
        m.transition = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = m.refresh().unwrap();
        let env = RsVarEnv::new(m, 1e-3, 10.0, 10).unwrap();
        let grid = RsVarGrid::new(env.model(), 3, 2);
        let mut cfg = TrainConfig::defaults(EnvKind::RsVar);
        cfg.hidden = vec![8];
        let learner = Learner::new(&cfg, env.feature_dim(), env.action_dim(), 1).unwrap();
        let buf = model_based_buffer(&env, &grid, &learner.actor, &mut Rng::new(1)).unwrap();
        assert!(buf.critic.weights.iter().all(|q| *q == 0.0 || *q == 1.0));
        // dropping the zero-weight rows leaves the loss unchanged
        let mut kept = Buffer::new(buf.critic.dim, buf.action_dim);
        let d = buf.critic.dim;
        let a = buf.action_dim;
        for i in 0..buf.len() {
            if buf.critic.weights[i] > 0.0 {
                kept.push(
                    &buf.critic.features[i * d..(i + 1) * d],
                    &buf.actions[i * a..(i + 1) * a],
                    buf.critic.rewards[i],
                    &buf.critic.next_features[i * d..(i + 1) * d],
                    false,
                    1.0,
                );
            }
        }
        let full = learner.evaluate_losses(&buf).unwrap();
        let part = learner.evaluate_losses(&kept).unwrap();
        assert!((full.critic_loss - part.critic_loss).abs() < 1e-10);
        assert!((full.actor_loss - part.actor_loss).abs() < 1e-10);
    }

    /// Reward `c` forever; episodes are truncated, never terminal.
    struct ConstantEnv {
        c: f64,
        t: usize,
    }

    impl Environment for ConstantEnv {
        fn reset(&mut self, _rng: &mut Rng) -> Result<MarketState> {
            self.t = 0;
            Ok(self.state())
        }
        fn step(&mut self, _action: &[f64], _rng: &mut Rng) -> Result<StepResult> {
            self.t += 1;
            Ok(StepResult {
                state: self.state(),
                reward: self.c,
                done: false,
            })
        }
        fn features(&self, _state: &MarketState) -> Vec<f64> {
            vec![1.0]
        }
        fn feature_dim(&self) -> usize {
            1
        }
        fn action_dim(&self) -> usize {
            2
        }
        fn action_labels(&self) -> Vec<String> {
            vec!["a".into(), "b".into()]
        }
    }

    impl ConstantEnv {
        fn state(&self) -> MarketState {
            MarketState {
                wealth: 1.0,
                shares: vec![],
                balance: 0.0,
                exogenous: vec![],
                regime: None,
                step: self.t,
                prev_weights: vec![],
            }
        }
    }

    fn constant_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::defaults(EnvKind::TwoPeriod);
        cfg.beta = 0.9;
        cfg.hidden = vec![4];
        cfg.episodes = 10;
        cfg.min_epochs = 0;
        cfg.iterations_per_episode = 100;
        cfg.paths_per_episode = 1;
        cfg.max_episode_steps = 8;
        cfg.critic_steps = 5;
        cfg.rho = 0.2;
        cfg.critic_lr_end = 0.002;
        cfg
    }

    #[test]
    fn constant_reward_heads_reach_geometric_sum() {
        let mut cfg = constant_cfg();
        cfg.episodes = 30;
        cfg.td_scale = 1.0;
        let mut env = ConstantEnv { c: 0.5, t: 0 };
        let out = train(&mut env, None, &cfg).unwrap();
        assert!(out.divergence.is_none());
        let v = out.critic.value_vector(&[1.0]).unwrap();
        let want = 0.5 / (1.0 - 0.9);
        for x in v {
            assert!((x - want).abs() < 0.05 * want, "{x} vs {want}");
        }
        assert_eq!(out.history.records.len(), 30);
    }

    #[test]
    fn identical_seeds_identical_history() {
        let mut cfg = constant_cfg();
        cfg.iterations_per_episode = 5;
        let a = train(&mut ConstantEnv { c: 0.1, t: 0 }, None, &cfg).unwrap();
        let b = train(&mut ConstantEnv { c: 0.1, t: 0 }, None, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.actor, b.actor);
    }

    #[test]
    fn early_stopping_respects_min_epochs() {
        let mut cfg = constant_cfg();
        cfg.episodes = 12;
        cfg.iterations_per_episode = 2;
        cfg.min_epochs = 8;
        cfg.eval_every = 1;
        cfg.patience = 1;
        let mut val = ConstantEnv { c: 0.1, t: 0 };
        let out = train(&mut ConstantEnv { c: 0.1, t: 0 }, Some(&mut val), &cfg).unwrap();
        assert!(out.history.records.len() >= 8);
        assert!(out.history.records.iter().all(|r| r.val_stat.is_some()));
        let best = &out.history.records[out.history.best_episode - 1];
        assert!(best.best);
        let min = out
            .history
            .records
            .iter()
            .filter_map(|r| r.val_stat)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.val_stat, Some(min));
    }

    #[test]
    fn schedules_decay_together() {
        let cfg = TrainConfig::defaults(EnvKind::Historical);
        let mut l = Learner::new(&cfg, 3, 2, 50).unwrap();
        for _ in 0..60 {
            let (c, a) = l.rates();
            assert!(c >= a);
            l.updates += 1;
        }
    }
}
