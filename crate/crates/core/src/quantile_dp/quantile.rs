use serde::{Deserialize, Serialize};

use crate::error::{check_tau, Error, Result};

/// Cumulative-probability slack used when comparing against `tau`.
pub(crate) const CUM_TOL: f64 = 1e-12;

/// `inf { x : F(x) >= tau }` for a finite discrete distribution.
///
/// Atoms need not be sorted; zero-probability atoms are allowed.
pub fn discrete_quantile(atoms: &[f64], probs: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if atoms.is_empty() {
        return Err(Error::Domain("quantile of an empty support".into()));
    }
    if atoms.len() != probs.len() {
        return Err(Error::Shape {
            expected: atoms.len(),
            got: probs.len(),
        });
    }
    if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain(
            "probabilities must be finite and nonnegative".into(),
        ));
    }
    let total: f64 = probs.iter().sum();
    if (total - 1.0).abs() > 1e-10 {
        return Err(Error::Domain(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    if atoms.iter().any(|a| !a.is_finite()) {
        return Err(Error::Domain("atoms must be finite".into()));
    }
    let mut order: Vec<usize> = (0..atoms.len()).collect();
    order.sort_by(|&i, &j| atoms[i].total_cmp(&atoms[j]));
    Ok(quantile_sorted(&order, atoms, probs, tau))
}

/// Quantile over `(atom, prob)` pairs that are already validated.
pub(crate) fn quantile_of_pairs(pairs: &mut [(f64, f64)], tau: f64) -> f64 {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut cum = 0.0;
    for &(x, p) in pairs.iter() {
        cum += p;
        if p > 0.0 && cum >= tau - CUM_TOL {
            return x;
        }
    }
    pairs
        .iter()
        .rev()
        .find(|(_, p)| *p > 0.0)
        .map_or(pairs[pairs.len() - 1].0, |(x, _)| *x)
}

fn quantile_sorted(order: &[usize], atoms: &[f64], probs: &[f64], tau: f64) -> f64 {
    let mut cum = 0.0;
    for &i in order {
        cum += probs[i];
        if probs[i] > 0.0 && cum >= tau - CUM_TOL {
            return atoms[i];
        }
    }
    let last = order
        .iter()
        .rev()
        .find(|&&i| probs[i] > 0.0)
        .unwrap_or(&order[order.len() - 1]);
    atoms[*last]
}

/// Equal-weight quantile of a sample (inf definition, no interpolation).
pub fn empirical_quantile(samples: &[f64], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    if samples.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[empirical_rank(sorted.len(), tau)])
}

/// Zero-based index of the tau-quantile in a sorted sample of size `n`.
pub(crate) fn empirical_rank(n: usize, tau: f64) -> usize {
    let k = (n as f64 * tau - 1e-9).ceil() as usize;
    k.clamp(1, n) - 1
}

/// Ordered quantile levels with a designated target level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    levels: Vec<f64>,
    target_index: usize,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>, target_index: usize) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("quantile grid is empty".into()));
        }
        for l in &levels {
            check_tau(*l)?;
        }
        if levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(format!(
                "quantile levels must be strictly increasing, got {levels:?}"
            )));
        }
        if target_index >= levels.len() {
            return Err(Error::Config(format!(
                "target index {target_index} out of range for {} levels",
                levels.len()
            )));
        }
        Ok(Self {
            levels,
            target_index,
        })
    }

    /// Levels `j / (p + 1)`, `j = 1..=p`, targeting the level closest to `tau`
    /// (which must be on the grid within 1e-9).
    pub fn regular(p: usize, tau: f64) -> Result<Self> {
        let levels: Vec<f64> = (1..=p).map(|j| j as f64 / (p + 1) as f64).collect();
        Self::with_target(levels, tau)
    }

    pub fn with_target(levels: Vec<f64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        let idx = levels
            .iter()
            .position(|l| (l - tau).abs() < 1e-9)
            .ok_or_else(|| {
                Error::Config(format!("target level {tau} is not on the grid {levels:?}"))
            })?;
        Self::new(levels, idx)
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    pub fn target(&self) -> f64 {
        self.levels[self.target_index]
    }
}
