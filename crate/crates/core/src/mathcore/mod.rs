//! Deterministic numerical primitives shared by every other module.

pub mod dist;
pub mod loss;
pub mod mlp;
pub mod normal;
pub mod optim;
pub mod rng;

pub use dist::{
    dirichlet_entropy, dirichlet_entropy_grad, dirichlet_log_prob, dirichlet_log_prob_grad,
    dirichlet_sample, gaussian_entropy, gaussian_log_prob, gaussian_policy_sample, DirichletSample,
    GaussianSample, PolicyDistribution,
};
pub use loss::{pinball_derivative, pinball_loss, sigmoid, softmax, softplus};
pub use mlp::{Activation, ForwardCache, Layer, Mlp, MlpGrads};
pub use normal::{inv_std_normal_cdf, normal_quantile, std_normal_cdf, std_normal_pdf};
pub use optim::{LrSchedule, Sgd};
pub use rng::Rng;
