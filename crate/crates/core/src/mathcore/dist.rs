//! Policy distributions over the portfolio simplex.
//!
//! Gaussian-softmax: a Gaussian draw in raw (pre-softmax) space pushed through
//! softmax. Log-densities are taken in raw space (no softmax Jacobian).
//! Dirichlet: sampled through normalised Gamma draws in log space.

use std::f64::consts::{E, PI};

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::loss::softmax;
use super::rng::Rng;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSample {
    pub raw: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirichletSample {
    pub weights: Vec<f64>,
    pub log_prob: f64,
}

/// Parameters of a policy distribution at one state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PolicyDistribution {
    Gaussian { mean: Vec<f64>, sigma: f64 },
    Dirichlet { concentration: Vec<f64> },
}

impl PolicyDistribution {
    pub fn entropy(&self) -> f64 {
        match self {
            PolicyDistribution::Gaussian { mean, sigma } => gaussian_entropy(mean.len(), *sigma),
            PolicyDistribution::Dirichlet { concentration } => dirichlet_entropy(concentration),
        }
    }

    /// Deterministic "mean" portfolio: softmax of the means, or normalised
    /// concentrations.
    pub fn mean_weights(&self) -> Vec<f64> {
        match self {
            PolicyDistribution::Gaussian { mean, .. } => softmax(mean),
            PolicyDistribution::Dirichlet { concentration } => {
                let total: f64 = concentration.iter().sum();
                concentration.iter().map(|a| a / total).collect()
            }
        }
    }
}

pub fn gaussian_log_prob(raw: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let n = raw.len() as f64;
    let sq: f64 = raw.iter().zip(mean).map(|(r, m)| (r - m) * (r - m)).sum();
    -0.5 * n * (2.0 * PI * sigma * sigma).ln() - sq / (2.0 * sigma * sigma)
}

pub fn gaussian_entropy(dim: usize, sigma: f64) -> f64 {
    0.5 * dim as f64 * (2.0 * PI * E * sigma * sigma).ln()
}

pub fn gaussian_policy_sample(mean: &[f64], sigma: f64, rng: &mut Rng) -> Result<GaussianSample> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!(
            "policy sigma must be positive, got {sigma}"
        )));
    }
    let raw: Vec<f64> = mean.iter().map(|m| m + sigma * rng.normal()).collect();
    let log_prob = gaussian_log_prob(&raw, mean, sigma);
    let weights = softmax(&raw);
    Ok(GaussianSample {
        raw,
        weights,
        log_prob,
    })
}

fn check_concentration(concentration: &[f64]) -> Result<()> {
    if concentration.is_empty() || concentration.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
        return Err(Error::Domain(format!(
            "Dirichlet concentrations must be positive and finite, got {concentration:?}"
        )));
    }
    Ok(())
}

pub fn dirichlet_log_prob(weights: &[f64], concentration: &[f64]) -> f64 {
    let total: f64 = concentration.iter().sum();
    let mut lp = ln_gamma(total);
    for (w, a) in weights.iter().zip(concentration) {
        lp += (a - 1.0) * w.ln() - ln_gamma(*a);
    }
    lp
}

pub fn dirichlet_entropy(concentration: &[f64]) -> f64 {
    let k = concentration.len() as f64;
    let total: f64 = concentration.iter().sum();
    let ln_beta: f64 = concentration.iter().map(|a| ln_gamma(*a)).sum::<f64>() - ln_gamma(total);
    ln_beta + (total - k) * digamma(total)
        - concentration
            .iter()
            .map(|a| (a - 1.0) * digamma(*a))
            .sum::<f64>()
}

pub fn dirichlet_sample(concentration: &[f64], rng: &mut Rng) -> Result<DirichletSample> {
    check_concentration(concentration)?;
    let logs: Vec<f64> = concentration
        .iter()
        .map(|a| rng.log_gamma_draw(*a))
        .collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    // keep every coordinate strictly positive
    weights.iter_mut().for_each(|w| *w = w.max(1e-300));
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let log_prob = dirichlet_log_prob(&weights, concentration);
    Ok(DirichletSample { weights, log_prob })
}

/// Trigamma function, by recurrence up to x >= 20 and the asymptotic series.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 20.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

/// `d log p(w | a) / d a_i`.
pub fn dirichlet_log_prob_grad(weights: &[f64], concentration: &[f64]) -> Vec<f64> {
    let total: f64 = concentration.iter().sum();
    let dt = digamma(total);
    weights
        .iter()
        .zip(concentration)
        .map(|(w, a)| dt - digamma(*a) + w.ln())
        .collect()
}

/// `d H(a) / d a_i`.
pub fn dirichlet_entropy_grad(concentration: &[f64]) -> Vec<f64> {
    let k = concentration.len() as f64;
    let total: f64 = concentration.iter().sum();
    let common = (total - k) * trigamma(total);
    concentration
        .iter()
        .map(|a| common - (a - 1.0) * trigamma(*a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_gaussian_is_softmax_of_mean() {
        let mut rng = Rng::new(1);
        let mean = [0.3, -0.2, 1.1];
        let s = gaussian_policy_sample(&mean, 1e-8, &mut rng).unwrap();
        for (a, b) in s.weights.iter().zip(softmax(&mean)) {
            assert!((a - b).abs() < 1e-7);
        }
        assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_mode_density() {
        let mean = [0.5, -1.0, 2.0, 0.0];
        let sigma: f64 = 0.7;
        let lp = gaussian_log_prob(&mean, &mean, sigma);
        let expected = -(4.0 / 2.0) * (2.0 * PI * sigma * sigma).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn gaussian_sample_rejects_nonpositive_sigma() {
        let mut rng = Rng::new(1);
        assert!(gaussian_policy_sample(&[0.0], 0.0, &mut rng).is_err());
    }

    #[test]
    fn symmetric_gaussian_weights_average_to_uniform() {
        let mut rng = Rng::new(2);
        let n = 100_000;
        let mut sum = [0.0f64; 3];
        let mut sumsq = [0.0f64; 3];
        for _ in 0..n {
            let s = gaussian_policy_sample(&[0.0; 3], 0.5, &mut rng).unwrap();
            for i in 0..3 {
                sum[i] += s.weights[i];
                sumsq[i] += s.weights[i] * s.weights[i];
            }
        }
        for i in 0..3 {
            let m = sum[i] / n as f64;
            let sd = (sumsq[i] / n as f64 - m * m).sqrt();
            assert!((m - 1.0 / 3.0).abs() < 3.0 * sd / (n as f64).sqrt(), "{m}");
        }
    }

    fn dirichlet_mean_check(conc: &[f64], seed: u64) {
        let mut rng = Rng::new(seed);
        let n = 100_000;
        let k = conc.len();
        let total: f64 = conc.iter().sum();
        let mut sum = vec![0.0; k];
        for _ in 0..n {
            let s = dirichlet_sample(conc, &mut rng).unwrap();
            assert!(s.weights.iter().all(|w| *w > 0.0 && *w <= 1.0));
            assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k {
                sum[i] += s.weights[i];
            }
        }
        for i in 0..k {
            let mean = conc[i] / total;
            let var = mean * (1.0 - mean) / (total + 1.0);
            let se = (var / n as f64).sqrt();
            let got = sum[i] / n as f64;
            assert!((got - mean).abs() < 4.0 * se, "coord {i}: {got} vs {mean}");
        }
    }

    #[test]
    fn dirichlet_uniform_mean() {
        dirichlet_mean_check(&[1.0, 1.0, 1.0], 3);
    }

    #[test]
    fn dirichlet_general_mean() {
        dirichlet_mean_check(&[0.4, 2.5, 7.0], 4);
        dirichlet_mean_check(&[0.05, 0.3, 0.1], 5);
    }

    #[test]
    fn dirichlet_uniform_density_on_segment() {
        assert!(dirichlet_log_prob(&[0.5, 0.5], &[1.0, 1.0]).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_rejects_nonpositive() {
        let mut rng = Rng::new(0);
        assert!(dirichlet_sample(&[1.0, 0.0], &mut rng).is_err());
        assert!(dirichlet_sample(&[1.0, -2.0], &mut rng).is_err());
    }

    #[test]
    fn entropy_closed_forms() {
        let h = PolicyDistribution::Gaussian {
            mean: vec![0.0],
            sigma: 1.0,
        }
        .entropy();
        assert!((h - 1.418_938_533_204_672_7).abs() < 1e-12);
        assert!(dirichlet_entropy(&[1.0, 1.0]).abs() < 1e-12);
        let diff = gaussian_entropy(3, 2.0) - gaussian_entropy(3, 1.0);
        assert!((diff - 3.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn trigamma_reference_values() {
        // psi_1(1) = pi^2 / 6, psi_1(1/2) = pi^2 / 2
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-12);
        assert!((trigamma(10.0) - 0.105_166_335_681_685_5).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_gradients_match_finite_differences() {
        let w = [0.2, 0.5, 0.3];
        let a = [0.7, 1.9, 3.2];
        let g = dirichlet_log_prob_grad(&w, &a);
        let ge = dirichlet_entropy_grad(&a);
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let fd = (dirichlet_log_prob(&w, &ap) - dirichlet_log_prob(&w, &am)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-6);
            let fde = (dirichlet_entropy(&ap) - dirichlet_entropy(&am)) / (2.0 * h);
            assert!((fde - ge[i]).abs() < 1e-6);
        }
    }
}
