//! Multi-head quantile critic trained with the pinball loss, a monotonicity
//! penalty across heads and a soft-updated target network.

use crate::error::{Error, Result};
use crate::mathcore::loss::pinball_unchecked;
use crate::mathcore::{pinball_derivative, Mlp, MlpGrads, Rng};
use crate::quantile_dp::QuantileGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct CriticParams {
    pub online: Mlp,
    pub target: Mlp,
    pub grid: QuantileGrid,
    /// Coefficient on `sum_j relu(V_j - V_{j+1})`.
    pub order_penalty: f64,
    /// Soft-update rate for the target network.
    pub rho: f64,
}

impl CriticParams {
    /// Fresh critic whose target starts as a copy of the online network.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        grid: QuantileGrid,
        weight_decay: f64,
        order_penalty: f64,
        rho: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(grid.len());
        let online = Mlp::new(&sizes, weight_decay, rng)?;
        Self::from_parts(online.clone(), online, grid, order_penalty, rho)
    }

    pub fn from_parts(
        online: Mlp,
        target: Mlp,
        grid: QuantileGrid,
        order_penalty: f64,
        rho: f64,
    ) -> Result<Self> {
        if !online.same_shape(&target) {
            return Err(Error::Config(
                "online and target critic shapes differ".into(),
            ));
        }
        if online.output_dim() != grid.len() {
            return Err(Error::Shape {
                expected: grid.len(),
                got: online.output_dim(),
            });
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::Config(format!(
                "soft-update rate {rho} outside (0, 1]"
            )));
        }
        if !(order_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "order penalty {order_penalty} must be nonnegative"
            )));
        }
        Ok(Self {
            online,
            target,
            grid,
            order_penalty,
            rho,
        })
    }

    pub fn heads(&self) -> usize {
        self.grid.len()
    }

    pub fn input_dim(&self) -> usize {
        self.online.input_dim()
    }

    /// Online head values at one state.
    pub fn value_vector(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.online.forward(features)
    }

    pub fn value_batch(&self, features: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.online.forward_batch(features, batch)
    }

    /// `target <- rho * online + (1 - rho) * target`.
    pub fn soft_update(&mut self) {
        self.target.blend_from(&self.online, self.rho);
    }
}

/// Transitions laid out for batched critic evaluation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CriticBatch {
    pub dim: usize,
    pub features: Vec<f64>,
    pub next_features: Vec<f64>,
    pub rewards: Vec<f64>,
    pub terminal: Vec<bool>,
    pub weights: Vec<f64>,
}

impl CriticBatch {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Default::default()
        }
    }

    pub fn push(
        &mut self,
        features: &[f64],
        reward: f64,
        next_features: &[f64],
        terminal: bool,
        weight: f64,
    ) {
        debug_assert_eq!(features.len(), self.dim);
        debug_assert_eq!(next_features.len(), self.dim);
        self.features.extend_from_slice(features);
        self.next_features.extend_from_slice(next_features);
        self.rewards.push(reward);
        self.terminal.push(terminal);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    fn validate(&self) -> Result<f64> {
        let n = self.len();
        if n == 0 {
            return Err(Error::DegenerateBatch("empty batch".into()));
        }
        if self.features.len() != n * self.dim || self.next_features.len() != n * self.dim {
            return Err(Error::Shape {
                expected: n * self.dim,
                got: self.features.len(),
            });
        }
        if self.terminal.len() != n || self.weights.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: self.weights.len(),
            });
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::DegenerateBatch(
                "sample weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::DegenerateBatch("all sample weights are zero".into()));
        }
        Ok(total)
    }
}

/// `scale * (r + beta * target(s') - online(s))` per head; the bootstrap term
/// is dropped for terminal transitions.
pub fn td_errors(
    params: &CriticParams,
    features: &[f64],
    reward: f64,
    next_features: &[f64],
    terminal: bool,
    beta: f64,
    td_scale: f64,
) -> Result<Vec<f64>> {
    let v = params.online.forward(features)?;
    let boot = if terminal {
        vec![0.0; v.len()]
    } else {
        params.target.forward(next_features)?
    };
    Ok(v.iter()
        .zip(&boot)
        .map(|(vs, vn)| td_scale * (reward + beta * vn - vs))
        .collect())
}

/// Row-major `batch x heads` TD errors for a whole batch.
pub fn batch_td_errors(
    params: &CriticParams,
    batch: &CriticBatch,
    beta: f64,
    td_scale: f64,
) -> Result<Vec<f64>> {
    let n = batch.len();
    let v = params.online.forward_batch(&batch.features, n)?;
    let boot = params.target.forward_batch(&batch.next_features, n)?;
    Ok(assemble_td(
        &v,
        &boot,
        batch,
        params.heads(),
        beta,
        td_scale,
    ))
}

fn assemble_td(
    v: &[f64],
    boot: &[f64],
    batch: &CriticBatch,
    p: usize,
    beta: f64,
    td_scale: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for i in 0..batch.len() {
        let keep = if batch.terminal[i] { 0.0 } else { beta };
        for j in 0..p {
            let k = i * p + j;
            out[k] = td_scale * (batch.rewards[i] + keep * boot[k] - v[k]);
        }
    }
    out
}

/// Order penalty `sum_j relu(V_j - V_{j+1})` for one head vector.
pub fn order_violation(values: &[f64]) -> f64 {
    values.windows(2).map(|w| (w[0] - w[1]).max(0.0)).sum()
}

#[derive(Clone, Debug)]
pub struct CriticLoss {
    /// Weighted pinball plus order penalty (no L2 term).
    pub loss: f64,
    pub pinball: f64,
    pub penalty: f64,
    pub l2: f64,
    /// Gradient of `loss + l2` with respect to the online parameters.
    pub grads: MlpGrads,
    /// Row-major `batch x heads` TD errors.
    pub deltas: Vec<f64>,
}

impl CriticLoss {
    pub fn total(&self) -> f64 {
        self.loss + self.l2
    }
}

/// Self-normalised weighted critic loss `sum_i q_i l_i / sum_i q_i` and its
/// gradient through the online network (the target is held fixed).
pub fn critic_loss(
    params: &CriticParams,
    batch: &CriticBatch,
    beta: f64,
    td_scale: f64,
) -> Result<CriticLoss> {
    let total_w = batch.validate()?;
    let n = batch.len();
    let p = params.heads();
    let levels = params.grid.levels();
    let cache = params.online.forward_cached(&batch.features, n)?;
    let v = cache.output();
    let boot = params.target.forward_batch(&batch.next_features, n)?;
    let deltas = assemble_td(v, &boot, batch, p, beta, td_scale);
    let lam = params.order_penalty;
    let mut pinball = 0.0;
    let mut penalty = 0.0;
    let mut upstream = vec![0.0; n * p];
    for i in 0..n {
        let w = batch.weights[i] / total_w;
        if w == 0.0 {
            continue;
        }
        let row = &v[i * p..(i + 1) * p];
        let up = &mut upstream[i * p..(i + 1) * p];
        for j in 0..p {
            let d = deltas[i * p + j];
            pinball += w * pinball_unchecked(d, levels[j]);
            up[j] -= w * td_scale * pinball_derivative(d, levels[j]);
        }
        if lam > 0.0 {
            for j in 0..p.saturating_sub(1) {
                let gap = row[j] - row[j + 1];
                if gap > 0.0 {
                    penalty += w * lam * gap;
                    up[j] += w * lam;
                    up[j + 1] -= w * lam;
                }
            }
        }
    }
    let mut grads = params.online.backward(&cache, &upstream)?;
    params.online.add_l2_gradient(&mut grads);
    let loss = pinball + penalty;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numerical(format!(
            "critic loss became non-finite ({loss})"
        )));
    }
    Ok(CriticLoss {
        loss,
        pinball,
        penalty,
        l2: params.online.l2_penalty(),
        grads,
        deltas,
    })
}
