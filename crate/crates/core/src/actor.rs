//! Stochastic portfolio policy and the quantile-weighted policy-gradient
//! surrogate.

use serde::{Deserialize, Serialize};

use crate::error::{check_tau, Error, Result};
use crate::mathcore::{
    dirichlet_entropy, dirichlet_entropy_grad, dirichlet_log_prob, dirichlet_log_prob_grad,
    dirichlet_sample, gaussian_entropy, gaussian_log_prob, gaussian_policy_sample, sigmoid,
    softplus, Mlp, MlpGrads, PolicyDistribution, Rng,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PolicyHead {
    /// Network outputs are the means of a Gaussian in pre-softmax space.
    Gaussian { sigma: f64 },
    /// Concentrations `softplus(output) + bias`.
    Dirichlet { bias: f64 },
}

/// How the TD error enters the policy gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorSurrogate {
    /// `(tau - 1{delta < 0}) * grad log pi`: the quantile score.
    QuantileScore,
    /// `w(delta) * delta * grad log pi` with `w = tau` for `delta >= 0`,
    /// `1 - tau` otherwise.
    WeightedTd,
}

impl std::str::FromStr for ActorSurrogate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile_score" | "quantile-score" | "score" => Ok(Self::QuantileScore),
            "weighted_td" | "weighted-td" | "td" => Ok(Self::WeightedTd),
            _ => Err(Error::Config(format!("unknown actor surrogate '{s}'"))),
        }
    }
}

impl ActorSurrogate {
    pub fn name(self) -> &'static str {
        match self {
            Self::QuantileScore => "quantile_score",
            Self::WeightedTd => "weighted_td",
        }
    }
}

/// Scalar multiplying `grad log pi` in the ascent direction.
pub fn surrogate_weight(delta: f64, tau: f64, surrogate: ActorSurrogate) -> f64 {
    let w = if delta < 0.0 { 1.0 - tau } else { tau };
    match surrogate {
        ActorSurrogate::WeightedTd => w * delta,
        ActorSurrogate::QuantileScore => {
            if delta < 0.0 {
                tau - 1.0
            } else {
                tau
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorParams {
    pub net: Mlp,
    pub head: PolicyHead,
    pub entropy_coef: f64,
    pub surrogate: ActorSurrogate,
    /// Use the loss exactly as displayed (`+ log pi * weighted delta`), which
    /// under gradient descent pushes probability away from positive surprises.
    pub literal_sign: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionSample {
    pub weights: Vec<f64>,
    /// What the log-density is evaluated at: the raw Gaussian draw, or the
    /// Dirichlet weights themselves.
    pub raw: Vec<f64>,
    pub log_prob: f64,
    pub entropy: f64,
}

impl ActorParams {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        head: PolicyHead,
        weight_decay: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(action_dim);
        Self::from_net(Mlp::new(&sizes, weight_decay, rng)?, head)
    }

    pub fn from_net(net: Mlp, head: PolicyHead) -> Result<Self> {
        match head {
            PolicyHead::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                return Err(Error::Config(format!(
                    "policy sigma must be positive, got {sigma}"
                )));
            }
            PolicyHead::Dirichlet { bias } if !(bias >= 0.0 && bias.is_finite()) => {
                return Err(Error::Config(format!(
                    "Dirichlet bias must be nonnegative, got {bias}"
                )));
            }
            _ => {}
        }
        if net.output_dim() < 2 {
            return Err(Error::Config(
                "a portfolio needs at least two action coordinates".into(),
            ));
        }
        Ok(Self {
            net,
            head,
            entropy_coef: 0.0,
            surrogate: ActorSurrogate::QuantileScore,
            literal_sign: false,
        })
    }

    pub fn action_dim(&self) -> usize {
        self.net.output_dim()
    }

    fn head_distribution(&self, out: Vec<f64>) -> Result<PolicyDistribution> {
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "actor produced non-finite outputs {out:?}"
            )));
        }
        Ok(match self.head {
            PolicyHead::Gaussian { sigma } => PolicyDistribution::Gaussian { mean: out, sigma },
            PolicyHead::Dirichlet { bias } => PolicyDistribution::Dirichlet {
                concentration: out.iter().map(|o| softplus(*o) + bias).collect(),
            },
        })
    }

    pub fn distribution(&self, features: &[f64]) -> Result<PolicyDistribution> {
        self.head_distribution(self.net.forward(features)?)
    }

    pub fn act(&self, features: &[f64], rng: &mut Rng) -> Result<ActionSample> {
        let dist = self.distribution(features)?;
        let entropy = dist.entropy();
        match dist {
            PolicyDistribution::Gaussian { mean, sigma } => {
                let s = gaussian_policy_sample(&mean, sigma, rng)?;
                Ok(ActionSample {
                    weights: s.weights,
                    raw: s.raw,
                    log_prob: s.log_prob,
                    entropy,
                })
            }
            PolicyDistribution::Dirichlet { concentration } => {
                let s = dirichlet_sample(&concentration, rng)?;
                Ok(ActionSample {
                    raw: s.weights.clone(),
                    weights: s.weights,
                    log_prob: s.log_prob,
                    entropy,
                })
            }
        }
    }

    /// Deterministic evaluation action.
    pub fn mean_action(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.distribution(features)?.mean_weights())
    }

    pub fn log_prob(&self, features: &[f64], raw: &[f64]) -> Result<f64> {
        Ok(match self.distribution(features)? {
            PolicyDistribution::Gaussian { mean, sigma } => gaussian_log_prob(raw, &mean, sigma),
            PolicyDistribution::Dirichlet { concentration } => {
                dirichlet_log_prob(raw, &concentration)
            }
        })
    }
}

/// Per-sample surrogate: returns the loss value and the coefficients
/// multiplying `log pi` and the entropy in it.
pub fn actor_sample_loss(
    log_prob: f64,
    delta: f64,
    tau: f64,
    entropy: f64,
    entropy_coef: f64,
    surrogate: ActorSurrogate,
    literal_sign: bool,
) -> (f64, f64, f64) {
    let g = surrogate_weight(delta, tau, surrogate);
    let c = if literal_sign { g } else { -g };
    (c * log_prob - entropy_coef * entropy, c, -entropy_coef)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ActorBatch {
    pub dim: usize,
    pub action_dim: usize,
    pub features: Vec<f64>,
    pub actions: Vec<f64>,
    pub deltas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ActorBatch {
    pub fn new(dim: usize, action_dim: usize) -> Self {
        Self {
            dim,
            action_dim,
            ..Default::default()
        }
    }

    pub fn push(&mut self, features: &[f64], raw_action: &[f64], delta: f64, weight: f64) {
        debug_assert_eq!(features.len(), self.dim);
        debug_assert_eq!(raw_action.len(), self.action_dim);
        self.features.extend_from_slice(features);
        self.actions.extend_from_slice(raw_action);
        self.deltas.push(delta);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct ActorLoss {
    /// Self-normalised surrogate (no L2 term).
    pub loss: f64,
    pub l2: f64,
    pub mean_entropy: f64,
    /// Gradient of `loss + l2`.
    pub grads: MlpGrads,
}

/// Batched self-normalised surrogate `sum_i q_i l_i / sum_i q_i` and its
/// gradient. TD errors are constants here.
pub fn actor_loss(params: &ActorParams, batch: &ActorBatch, tau: f64) -> Result<ActorLoss> {
    check_tau(tau)?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::DegenerateBatch("empty actor batch".into()));
    }
    let a = params.action_dim();
    if batch.action_dim != a
        || batch.actions.len() != n * a
        || batch.features.len() != n * batch.dim
    {
        return Err(Error::Shape {
            expected: n * a,
            got: batch.actions.len(),
        });
    }
    let total: f64 = batch.weights.iter().sum();
    if batch.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
        return Err(Error::DegenerateBatch(
            "actor sample weights must be nonnegative with positive sum".into(),
        ));
    }
    let cache = params.net.forward_cached(&batch.features, n)?;
    let out = cache.output();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("actor produced non-finite outputs".into()));
    }
    let mut upstream = vec![0.0; n * a];
    let mut loss = 0.0;
    let mut mean_entropy = 0.0;
    for i in 0..n {
        let q = batch.weights[i] / total;
        let o = &out[i * a..(i + 1) * a];
        let raw = &batch.actions[i * a..(i + 1) * a];
        let up = &mut upstream[i * a..(i + 1) * a];
        match params.head {
            PolicyHead::Gaussian { sigma } => {
                let lp = gaussian_log_prob(raw, o, sigma);
                let ent = gaussian_entropy(a, sigma);
                let (l, c, _) = actor_sample_loss(
                    lp,
                    batch.deltas[i],
                    tau,
                    ent,
                    params.entropy_coef,
                    params.surrogate,
                    params.literal_sign,
                );
                loss += q * l;
                mean_entropy += q * ent;
                let s2 = sigma * sigma;
                for k in 0..a {
                    up[k] = q * c * (raw[k] - o[k]) / s2;
                }
            }
            PolicyHead::Dirichlet { bias } => {
                let conc: Vec<f64> = o.iter().map(|x| softplus(*x) + bias).collect();
                let lp = dirichlet_log_prob(raw, &conc);
                let ent = dirichlet_entropy(&conc);
                let (l, c, e) = actor_sample_loss(
                    lp,
                    batch.deltas[i],
                    tau,
                    ent,
                    params.entropy_coef,
                    params.surrogate,
                    params.literal_sign,
                );
                loss += q * l;
                mean_entropy += q * ent;
                let glp = dirichlet_log_prob_grad(raw, &conc);
                let gent = if e != 0.0 {
                    dirichlet_entropy_grad(&conc)
                } else {
                    vec![0.0; a]
                };
                for k in 0..a {
                    up[k] = q * (c * glp[k] + e * gent[k]) * sigmoid(o[k]);
                }
            }
        }
    }
    let mut grads = params.net.backward(&cache, &upstream)?;
    params.net.add_l2_gradient(&mut grads);
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "actor loss became non-finite ({loss})"
        )));
    }
    Ok(ActorLoss {
        loss,
        l2: params.net.l2_penalty(),
        mean_entropy,
        grads,
    })
}
