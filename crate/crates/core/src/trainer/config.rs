//! Flat `key = value` training configuration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::actor::{ActorSurrogate, PolicyHead};
use crate::env::{Regime, Scenario, TwoPeriodRegimeModel};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    TwoPeriod,
    RsVar,
    Historical,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TwoPeriod => "two-period",
            EnvKind::RsVar => "rs-var",
            EnvKind::Historical => "historical",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "two-period" | "regime" | "two-period-regime" => Ok(EnvKind::TwoPeriod),
            "rs-var" | "rsvar" | "sim" => Ok(EnvKind::RsVar),
            "historical" | "data" | "csv" => Ok(EnvKind::Historical),
            _ => Err(Error::Config(format!("unknown environment '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Gaussian,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub env: EnvKind,
    pub tau: f64,
    pub seed: u64,
    pub beta: f64,
    /// Buffer rebuilds are `episodes * iterations_per_episode`.
    pub episodes: usize,
    pub iterations_per_episode: usize,
    pub min_epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub critic_lr_start: f64,
    pub critic_lr_end: f64,
    pub critic_decay: f64,
    pub actor_lr_start: f64,
    pub actor_lr_end: f64,
    pub actor_decay: f64,
    pub rho: f64,
    pub order_penalty: f64,
    pub entropy_coef: f64,
    pub head: HeadKind,
    pub sigma: f64,
    pub dirichlet_bias: f64,
    pub surrogate: ActorSurrogate,
    pub literal_sign: bool,
    /// Feed the actor the TD error after `td_scale` rather than the raw one.
    pub actor_td_scaled: bool,
    pub reward_scale: f64,
    pub td_scale: f64,
    /// Number of heads; levels are `j / (quantiles + 1)`.
    pub quantiles: usize,
    pub hidden: Vec<usize>,
    pub weight_decay: f64,
    pub critic_steps: usize,
    pub actor_steps: usize,
    pub paths_per_episode: usize,
    /// 0: one update per episode; k: update after every k steps.
    pub update_every: usize,
    /// Steps after which an episode is truncated (0: never).
    pub max_episode_steps: usize,
    /// Gradient-norm clip (0: off).
    pub max_grad_norm: f64,
    pub cost: f64,
    // two-period regime world
    pub rf: f64,
    pub mu: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    pub p_ll: f64,
    pub p_hh: f64,
    pub w0: f64,
    pub start_regime: Option<Regime>,
    // regime-switching VAR
    pub scenario: Scenario,
    pub grid_w: usize,
    pub grid_r: usize,
    pub eval_paths: usize,
    pub eval_steps: usize,
    // historical data
    pub data: Option<PathBuf>,
    pub train_frac: f64,
    pub val_frac: f64,
    pub window: usize,
    pub initial_wealth: f64,
    pub interest: f64,
    pub forward_fill: bool,
    pub cash_slot: bool,
}

impl TrainConfig {
    /// Defaults for an environment family.
    pub fn defaults(env: EnvKind) -> Self {
        let base = TrainConfig {
            env,
            tau: 0.5,
            seed: 0,
            beta: 0.99,
            episodes: 50,
            iterations_per_episode: 1,
            min_epochs: 15,
            eval_every: 3,
            patience: 2,
            critic_lr_start: 0.01,
            critic_lr_end: 0.001,
            critic_decay: 1.5,
            actor_lr_start: 0.005,
            actor_lr_end: 0.001,
            actor_decay: 1.5,
            rho: 0.01,
            order_penalty: 5.0,
            entropy_coef: 0.0,
            head: HeadKind::Gaussian,
            sigma: 0.5,
            dirichlet_bias: 0.1,
            surrogate: ActorSurrogate::QuantileScore,
            literal_sign: false,
            actor_td_scaled: true,
            reward_scale: 1221.0,
            td_scale: 10.0,
            quantiles: 9,
            hidden: vec![16, 16],
            weight_decay: 1e-4,
            critic_steps: 1,
            actor_steps: 1,
            paths_per_episode: 1,
            update_every: 0,
            max_episode_steps: 0,
            max_grad_norm: 0.0,
            cost: 0.0,
            rf: 1.04,
            mu: 1.1,
            sigma_low: 0.03,
            sigma_high: 0.051,
            p_ll: 0.7,
            p_hh: 0.7,
            w0: 1.0,
            start_regime: None,
            scenario: Scenario::BullBear,
            grid_w: 5,
            grid_r: 5,
            eval_paths: 20,
            eval_steps: 100,
            data: None,
            train_frac: 0.7,
            val_frac: 0.15,
            window: 60,
            initial_wealth: 100.0,
            interest: 1.0002,
            forward_fill: false,
            cash_slot: false,
        };
        match env {
            EnvKind::Historical => base,
            EnvKind::TwoPeriod => TrainConfig {
                beta: 0.96,
                episodes: 60,
                iterations_per_episode: 10,
                min_epochs: 10,
                reward_scale: 10.0,
                paths_per_episode: 512,
                critic_steps: 5,
                actor_lr_start: 0.02,
                actor_lr_end: 0.005,
                actor_steps: 1,
                ..base
            },
            EnvKind::RsVar => TrainConfig {
                beta: 0.96,
                episodes: 10,
                iterations_per_episode: 10,
                min_epochs: 10,
                reward_scale: 10.0,
                hidden: vec![32, 32],
                head: HeadKind::Dirichlet,
                cost: 1e-3,
                rf: 1.001,
                actor_lr_start: 0.2,
                actor_lr_end: 0.05,
                critic_steps: 5,
                actor_steps: 1,
                order_penalty: 25.0,
                ..base
            },
        }
    }

    /// Resolves `env` first, then applies every pair in order on top of that
    /// environment's defaults.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let env = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "env")
            .map(|(_, v)| v.parse())
            .transpose()?
            .unwrap_or(EnvKind::TwoPeriod);
        let mut cfg = Self::defaults(env);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "env" => {
                let env: EnvKind = v.parse()?;
                if env != self.env {
                    return Err(Error::Config(format!(
                        "env is already '{}'; it cannot change to '{env}' after defaults were chosen",
                        self.env
                    )));
                }
            }
            "tau" => self.tau = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "beta" => self.beta = num(key, v)?,
            "episodes" => self.episodes = num(key, v)?,
            "iterations_per_episode" => self.iterations_per_episode = num(key, v)?,
            "min_epochs" => self.min_epochs = num(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "critic_lr_start" => self.critic_lr_start = num(key, v)?,
            "critic_lr_end" => self.critic_lr_end = num(key, v)?,
            "critic_decay" => self.critic_decay = num(key, v)?,
            "actor_lr_start" => self.actor_lr_start = num(key, v)?,
            "actor_lr_end" => self.actor_lr_end = num(key, v)?,
            "actor_decay" => self.actor_decay = num(key, v)?,
            "rho" => self.rho = num(key, v)?,
            "order_penalty" => self.order_penalty = num(key, v)?,
            "entropy_coef" => self.entropy_coef = num(key, v)?,
            "head" => {
                self.head = match v {
                    "gaussian" => HeadKind::Gaussian,
                    "dirichlet" => HeadKind::Dirichlet,
                    _ => return Err(bad(key, v)),
                }
            }
            "sigma" => self.sigma = num(key, v)?,
            "dirichlet_bias" => self.dirichlet_bias = num(key, v)?,
            "surrogate" => self.surrogate = v.parse()?,
            "literal_sign" => self.literal_sign = flag(key, v)?,
            "actor_td_scaled" => self.actor_td_scaled = flag(key, v)?,
            "reward_scale" => self.reward_scale = num(key, v)?,
            "td_scale" => self.td_scale = num(key, v)?,
            "quantiles" => self.quantiles = num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| num::<usize>(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "weight_decay" => self.weight_decay = num(key, v)?,
            "critic_steps" => self.critic_steps = num(key, v)?,
            "actor_steps" => self.actor_steps = num(key, v)?,
            "paths_per_episode" => self.paths_per_episode = num(key, v)?,
            "update_every" => self.update_every = num(key, v)?,
            "max_episode_steps" => self.max_episode_steps = num(key, v)?,
            "max_grad_norm" => self.max_grad_norm = num(key, v)?,
            "cost" => self.cost = num(key, v)?,
            "rf" => self.rf = num(key, v)?,
            "mu" => self.mu = num(key, v)?,
            "sigma_low" => self.sigma_low = num(key, v)?,
            "sigma_high" => self.sigma_high = num(key, v)?,
            "p_ll" => self.p_ll = num(key, v)?,
            "p_hh" => self.p_hh = num(key, v)?,
            "w0" => self.w0 = num(key, v)?,
            "start_regime" => {
                self.start_regime = match v {
                    "any" | "" => None,
                    "L" | "l" | "low" => Some(Regime::Low),
                    "H" | "h" | "high" => Some(Regime::High),
                    _ => return Err(bad(key, v)),
                }
            }
            "scenario" => self.scenario = v.parse()?,
            "grid_w" => self.grid_w = num(key, v)?,
            "grid_r" => self.grid_r = num(key, v)?,
            "eval_paths" => self.eval_paths = num(key, v)?,
            "eval_steps" => self.eval_steps = num(key, v)?,
            "data" => self.data = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "train_frac" => self.train_frac = num(key, v)?,
            "val_frac" => self.val_frac = num(key, v)?,
            "window" => self.window = num(key, v)?,
            "initial_wealth" => self.initial_wealth = num(key, v)?,
            "interest" => self.interest = num(key, v)?,
            "forward_fill" => self.forward_fill = flag(key, v)?,
            "cash_slot" => self.cash_slot = flag(key, v)?,
            other => return Err(Error::Config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return fail(format!("tau must lie in (0, 1), got {}", self.tau));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return fail(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.episodes == 0 || self.iterations_per_episode == 0 {
            return fail("episodes and iterations_per_episode must be positive".into());
        }
        if self.episodes < self.min_epochs {
            return fail(format!(
                "episodes ({}) must be at least min_epochs ({})",
                self.episodes, self.min_epochs
            ));
        }
        if self.patience == 0 || self.eval_every == 0 {
            return fail("patience and eval_every must be at least 1".into());
        }
        for (name, v) in [
            ("critic_lr_start", self.critic_lr_start),
            ("critic_lr_end", self.critic_lr_end),
            ("actor_lr_start", self.actor_lr_start),
            ("actor_lr_end", self.actor_lr_end),
            ("critic_decay", self.critic_decay),
            ("actor_decay", self.actor_decay),
            ("reward_scale", self.reward_scale),
            ("td_scale", self.td_scale),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return fail(format!("rho must lie in (0, 1], got {}", self.rho));
        }
        for (name, v) in [
            ("order_penalty", self.order_penalty),
            ("entropy_coef", self.entropy_coef),
            ("weight_decay", self.weight_decay),
            ("max_grad_norm", self.max_grad_norm),
            ("dirichlet_bias", self.dirichlet_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return fail(format!("{name} must be nonnegative, got {v}"));
            }
        }
        if !(self.sigma > 0.0) {
            return fail(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.quantiles == 0 || self.hidden.contains(&0) {
            return fail("quantiles and hidden layer widths must be positive".into());
        }
        if self.critic_steps == 0 || self.paths_per_episode == 0 {
            return fail("critic_steps and paths_per_episode must be positive".into());
        }
        if !(self.cost >= 0.0 && self.cost < 1.0) {
            return fail(format!("cost must lie in [0, 1), got {}", self.cost));
        }
        if self.grid_w < 2 || self.grid_r < 1 || self.eval_paths == 0 || self.eval_steps == 0 {
            return fail("grid_w >= 2, grid_r >= 1 and positive evaluation sizes are required".into());
        }
        if !(self.train_frac > 0.0 && self.val_frac >= 0.0 && self.train_frac + self.val_frac <= 1.0 + 1e-12) {
            return fail(format!(
                "split fractions ({}, {}) must be nonnegative with a positive training share and sum at most 1",
                self.train_frac, self.val_frac
            ));
        }
        if self.env == EnvKind::TwoPeriod {
            self.two_period_model().validate()?;
        }
        Ok(())
    }

    pub fn two_period_model(&self) -> TwoPeriodRegimeModel {
        TwoPeriodRegimeModel {
            rf: self.rf,
            mu: self.mu,
            sigma_low: self.sigma_low,
            sigma_high: self.sigma_high,
            p_ll: self.p_ll,
            p_hh: self.p_hh,
            beta: self.beta,
            w0: self.w0,
        }
    }

    pub fn policy_head(&self) -> PolicyHead {
        match self.head {
            HeadKind::Gaussian => PolicyHead::Gaussian { sigma: self.sigma },
            HeadKind::Dirichlet => PolicyHead::Dirichlet {
                bias: self.dirichlet_bias,
            },
        }
    }

    pub fn total_iterations(&self) -> usize {
        self.episodes * self.iterations_per_episode
    }

    /// Every key with its resolved value, in a stable order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            ("env", self.env.to_string()),
            ("tau", self.tau.to_string()),
            ("seed", self.seed.to_string()),
            ("beta", self.beta.to_string()),
            ("episodes", self.episodes.to_string()),
            ("iterations_per_episode", self.iterations_per_episode.to_string()),
            ("min_epochs", self.min_epochs.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("patience", self.patience.to_string()),
            ("critic_lr_start", self.critic_lr_start.to_string()),
            ("critic_lr_end", self.critic_lr_end.to_string()),
            ("critic_decay", self.critic_decay.to_string()),
            ("actor_lr_start", self.actor_lr_start.to_string()),
            ("actor_lr_end", self.actor_lr_end.to_string()),
            ("actor_decay", self.actor_decay.to_string()),
            ("rho", self.rho.to_string()),
            ("order_penalty", self.order_penalty.to_string()),
            ("entropy_coef", self.entropy_coef.to_string()),
            (
                "head",
                match self.head {
                    HeadKind::Gaussian => "gaussian".into(),
                    HeadKind::Dirichlet => "dirichlet".into(),
                },
            ),
            ("sigma", self.sigma.to_string()),
            ("dirichlet_bias", self.dirichlet_bias.to_string()),
            ("surrogate", self.surrogate.name().into()),
            ("literal_sign", self.literal_sign.to_string()),
            ("actor_td_scaled", self.actor_td_scaled.to_string()),
            ("reward_scale", self.reward_scale.to_string()),
            ("td_scale", self.td_scale.to_string()),
            ("quantiles", self.quantiles.to_string()),
            ("hidden", list(&self.hidden)),
            ("weight_decay", self.weight_decay.to_string()),
            ("critic_steps", self.critic_steps.to_string()),
            ("actor_steps", self.actor_steps.to_string()),
            ("paths_per_episode", self.paths_per_episode.to_string()),
            ("update_every", self.update_every.to_string()),
            ("max_episode_steps", self.max_episode_steps.to_string()),
            ("max_grad_norm", self.max_grad_norm.to_string()),
            ("cost", self.cost.to_string()),
            ("rf", self.rf.to_string()),
            ("mu", self.mu.to_string()),
            ("sigma_low", self.sigma_low.to_string()),
            ("sigma_high", self.sigma_high.to_string()),
            ("p_ll", self.p_ll.to_string()),
            ("p_hh", self.p_hh.to_string()),
            ("w0", self.w0.to_string()),
            (
                "start_regime",
                self.start_regime.map_or("any".into(), |z| z.label().to_string()),
            ),
            ("scenario", self.scenario.name().into()),
            ("grid_w", self.grid_w.to_string()),
            ("grid_r", self.grid_r.to_string()),
            ("eval_paths", self.eval_paths.to_string()),
            ("eval_steps", self.eval_steps.to_string()),
            (
                "data",
                self.data.as_ref().map_or(String::new(), |p| p.display().to_string()),
            ),
            ("train_frac", self.train_frac.to_string()),
            ("val_frac", self.val_frac.to_string()),
            ("window", self.window.to_string()),
            ("initial_wealth", self.initial_wealth.to_string()),
            ("interest", self.interest.to_string()),
            ("forward_fill", self.forward_fill.to_string()),
            ("cash_slot", self.cash_slot.to_string()),
        ]
    }

    /// Text accepted by [`parse_config`] that reproduces this configuration.
    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, v))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(bad(key, v)),
    }
}

fn bad(key: &str, v: &str) -> Error {
    Error::Config(format!("invalid value '{v}' for '{key}'"))
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', found '{line}'", i + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `key=value` command-line override.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{arg}' is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
