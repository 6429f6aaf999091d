//! JSON checkpoint holding both networks, the target critic and the grid.
//!
//! Layout (format `qprl-checkpoint`, version 1):
//! `levels`, `target_index`, `actor`/`critic`/`critic_target` as
//! `{sizes, weight_decay, params}` with `params` the flattened layer-by-layer
//! `weights` (row-major `outputs x inputs`) then `bias`, plus `head`,
//! `order_penalty`, `rho`, `entropy_coef`, `surrogate`, `literal_sign`,
//! `episode`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::actor::{ActorParams, ActorSurrogate, PolicyHead};
use crate::critic::CriticParams;
use crate::error::{Error, Result};
use crate::mathcore::Mlp;
use crate::quantile_dp::QuantileGrid;

pub const CHECKPOINT_FORMAT: &str = "qprl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkBlob {
    pub sizes: Vec<usize>,
    pub weight_decay: f64,
    pub params: Vec<f64>,
}

impl NetworkBlob {
    pub fn from_mlp(net: &Mlp) -> Self {
        Self {
            sizes: net.sizes(),
            weight_decay: net.weight_decay,
            params: net.flat_params(),
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        let mut net = Mlp::zeros(&self.sizes, self.weight_decay)?;
        net.set_flat_params(&self.params)?;
        Ok(net)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub levels: Vec<f64>,
    pub target_index: usize,
    pub head: PolicyHead,
    pub order_penalty: f64,
    pub rho: f64,
    pub entropy_coef: f64,
    pub surrogate: ActorSurrogate,
    pub literal_sign: bool,
    pub episode: usize,
    pub actor: NetworkBlob,
    pub critic: NetworkBlob,
    pub critic_target: NetworkBlob,
}

impl Checkpoint {
    pub fn new(actor: &ActorParams, critic: &CriticParams, episode: usize) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            levels: critic.grid.levels().to_vec(),
            target_index: critic.grid.target_index(),
            head: actor.head,
            order_penalty: critic.order_penalty,
            rho: critic.rho,
            entropy_coef: actor.entropy_coef,
            surrogate: actor.surrogate,
            literal_sign: actor.literal_sign,
            episode,
            actor: NetworkBlob::from_mlp(&actor.net),
            critic: NetworkBlob::from_mlp(&critic.online),
            critic_target: NetworkBlob::from_mlp(&critic.target),
        }
    }

    pub fn restore(&self) -> Result<(ActorParams, CriticParams)> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!("not a checkpoint (format '{}')", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut actor = ActorParams::from_net(self.actor.to_mlp()?, self.head)?;
        actor.entropy_coef = self.entropy_coef;
        actor.surrogate = self.surrogate;
        actor.literal_sign = self.literal_sign;
        let grid = QuantileGrid::new(self.levels.clone(), self.target_index)?;
        let critic = CriticParams::from_parts(
            self.critic.to_mlp()?,
            self.critic_target.to_mlp()?,
            grid,
            self.order_penalty,
            self.rho,
        )?;
        Ok((actor, critic))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mathcore::Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = Rng::new(1);
        let grid = QuantileGrid::regular(9, 0.1).unwrap();
        let critic = CriticParams::new(5, &[8, 8], grid, 1e-4, 5.0, 0.01, &mut rng).unwrap();
        let mut actor = ActorParams::new(5, &[8, 8], 3, PolicyHead::Dirichlet { bias: 0.1 }, 1e-4, &mut rng).unwrap();
        actor.literal_sign = true;
        let ck = Checkpoint::new(&actor, &critic, 7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (a, c) = back.restore().unwrap();
        assert_eq!(a, actor);
        assert_eq!(c, critic);
    }

    #[test]
    fn rejects_foreign_files() {
        let mut rng = Rng::new(2);
        let grid = QuantileGrid::regular(3, 0.5).unwrap();
        let critic = CriticParams::new(2, &[4], grid, 0.0, 1.0, 0.5, &mut rng).unwrap();
        let actor = ActorParams::new(2, &[4], 2, PolicyHead::Gaussian { sigma: 0.5 }, 0.0, &mut rng).unwrap();
        let mut ck = Checkpoint::new(&actor, &critic, 0);
        ck.version = 99;
        assert!(ck.restore().is_err());
        ck.version = CHECKPOINT_VERSION;
        ck.actor.params.pop();
        assert!(ck.restore().is_err());
    }
}
