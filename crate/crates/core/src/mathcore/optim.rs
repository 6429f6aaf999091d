use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};

/// Polynomial learning-rate decay from `start` to `end` over `total_steps`,
/// clamped at `end` afterwards:
/// `lr(t) = end + (start - end) * (1 - min(t, T) / T)^power`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub power: f64,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            start: lr,
            end: lr,
            power: 1.0,
            total_steps: 1,
        }
    }

    pub fn rate(&self, step: usize) -> f64 {
        if self.total_steps == 0 {
            return self.end;
        }
        let frac = (step.min(self.total_steps) as f64) / self.total_steps as f64;
        let f = (1.0 - frac).powf(self.power);
        let lr = self.start * f + self.end * (1.0 - f);
        lr.clamp(self.start.min(self.end), self.start.max(self.end))
    }
}

/// Plain gradient descent driven by an [`LrSchedule`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub schedule: LrSchedule,
    pub step: usize,
}

impl Sgd {
    pub fn new(schedule: LrSchedule) -> Self {
        Self { schedule, step: 0 }
    }

    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.step)
    }

    pub fn apply(&mut self, net: &mut Mlp, grads: &MlpGrads) {
        let lr = self.current_rate();
        net.apply_gradient(grads, lr);
        self.step += 1;
    }
}
