use std::io::Write;

use serde::{Deserialize, Serialize};

use super::mdp::{Outcome, TabularMdp};
use crate::env::{Regime, TwoPeriodRegimeModel};
use crate::error::{check_tau, Error, Result};
use crate::mathcore::{inv_std_normal_cdf, normal_quantile, std_normal_cdf};

/// Optimal share of the risky asset in one period.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Allocation {
    Risky,
    RiskFree,
    /// Any share in [0, 1] is optimal.
    Indifferent,
}

impl Allocation {
    fn from_comparison(q: f64, rf: f64) -> Self {
        if q > rf {
            Allocation::Risky
        } else if q < rf {
            Allocation::RiskFree
        } else {
            Allocation::Indifferent
        }
    }

    /// Risky share, with `Indifferent` reported as NaN.
    pub fn share(self) -> f64 {
        match self {
            Allocation::Risky => 1.0,
            Allocation::RiskFree => 0.0,
            Allocation::Indifferent => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CornerRule {
    pub value: f64,
    /// Allocation for periods `t+1..=T`.
    pub allocations: Vec<Allocation>,
}

/// Value at time `t` of terminal-wealth quantile maximisation with
/// independent returns: `beta^(T-t) W_t prod_k max(Q_tau[R_k], R_f)`.
/// `quantiles[k-1]` is `Q_tau[R_k]` for `k = 1..=T`.
pub fn corner_rule_value(
    quantiles: &[f64],
    rf: f64,
    beta: f64,
    wealth: f64,
    t: usize,
) -> Result<CornerRule> {
    if t > quantiles.len() {
        return Err(Error::Domain(format!(
            "t = {t} beyond horizon {}",
            quantiles.len()
        )));
    }
    let rest = &quantiles[t..];
    let mut value = beta.powi(rest.len() as i32) * wealth;
    let mut allocations = Vec::with_capacity(rest.len());
    for &q in rest {
        value *= q.max(rf);
        allocations.push(Allocation::from_comparison(q, rf));
    }
    Ok(CornerRule { value, allocations })
}

/// One normal (or point-mass when `sd == 0`) mixture component.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

fn mixture_cdf(components: &[MixtureComponent], y: f64) -> f64 {
    components
        .iter()
        .map(|c| {
            let f = if c.sd > 0.0 {
                std_normal_cdf((y - c.mean) / c.sd)
            } else {
                f64::from(y >= c.mean)
            };
            c.weight * f
        })
        .sum()
}

/// `tau`-quantile of a normal mixture by bisection to 1e-10.
pub fn mixture_quantile(components: &[MixtureComponent], tau: f64) -> Result<f64> {
    check_tau(tau)?;
    let live: Vec<MixtureComponent> = components
        .iter()
        .copied()
        .filter(|c| c.weight > 0.0)
        .collect();
    if live.is_empty() {
        return Err(Error::Domain("mixture has no mass".into()));
    }
    let lo_mean = live.iter().map(|c| c.mean).fold(f64::INFINITY, f64::min);
    let hi_mean = live
        .iter()
        .map(|c| c.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    let max_sd = live.iter().map(|c| c.sd).fold(0.0, f64::max);
    let pad = if max_sd > 0.0 { 12.0 * max_sd } else { 1e-9 };
    let (mut lo, mut hi) = (lo_mean - pad, hi_mean + pad);
    if !(mixture_cdf(&live, lo) < tau && mixture_cdf(&live, hi) >= tau) {
        return Err(Error::Numerical(format!(
            "mixture quantile bracket [{lo}, {hi}] failed"
        )));
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mixture_cdf(&live, mid) >= tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Solution of the two-period volatility-regime problem for one `tau`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegimeSolution {
    pub tau: f64,
    pub alpha_grid: Vec<f64>,
    /// Second-period rule per regime `[L, H]`.
    pub alpha1: [Allocation; 2],
    /// `max(Q_tau[R | z], R_f)` per regime.
    pub multiplier: [f64; 2],
    /// First-period argmax per initial regime (lowest grid point on ties).
    pub alpha0: [f64; 2],
    /// Every grid point attaining the first-period maximum within 1e-12.
    pub indifference0: [Vec<f64>; 2],
    pub value0: [f64; 2],
    /// `v_0(alpha; z_0)` over the grid.
    pub curve0: [Vec<f64>; 2],
    /// `v_1(alpha; z_1)` over the grid with `W_1 = 1`.
    pub curve1: [Vec<f64>; 2],
}

/// Second period by the corner rule, first period by grid search with the
/// mixture quantile over the next regime.
pub fn regime_example_solver(
    model: &TwoPeriodRegimeModel,
    tau: f64,
    grid_size: usize,
) -> Result<RegimeSolution> {
    check_tau(tau)?;
    model.validate()?;
    if grid_size < 101 {
        return Err(Error::Domain(format!(
            "alpha grid needs at least 101 points, got {grid_size}"
        )));
    }
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| i as f64 / (grid_size - 1) as f64)
        .collect();
    let rf = model.rf;
    let mut multiplier = [0.0; 2];
    let mut alpha1 = [Allocation::Indifferent; 2];
    let mut curve1: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for z in Regime::ALL {
        let q = normal_quantile(tau, model.mu, model.sigma(z))?;
        multiplier[z.index()] = q.max(rf);
        alpha1[z.index()] = Allocation::from_comparison(q, rf);
        curve1[z.index()] = grid
            .iter()
            .map(|a| model.beta * (rf + a * (q - rf)))
            .collect();
    }

    let mut alpha0 = [0.0; 2];
    let mut value0 = [0.0; 2];
    let mut indifference0: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let mut curve0: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let scale = model.beta * model.beta * model.w0;
    for z0 in Regime::ALL {
        let row = model.transition_row(z0);
        let sd0 = model.sigma(z0);
        let mut curve = Vec::with_capacity(grid_size);
        for &a in &grid {
            let growth_mean = rf + a * (model.mu - rf);
            let comps: Vec<MixtureComponent> = Regime::ALL
                .iter()
                .map(|z1| MixtureComponent {
                    weight: row[z1.index()],
                    mean: growth_mean * multiplier[z1.index()],
                    sd: a * sd0 * multiplier[z1.index()],
                })
                .collect();
            curve.push(scale * mixture_quantile(&comps, tau)?);
        }
        let (best_i, best) =
            curve
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| {
                    if *v > acc.1 {
                        (i, *v)
                    } else {
                        acc
                    }
                });
        let tol = 1e-12 * best.abs().max(1.0);
        indifference0[z0.index()] = grid
            .iter()
            .zip(&curve)
            .filter(|(_, v)| **v >= best - tol)
            .map(|(a, _)| *a)
            .collect();
        alpha0[z0.index()] = grid[best_i];
        value0[z0.index()] = best;
        curve0[z0.index()] = curve;
    }
    Ok(RegimeSolution {
        tau,
        alpha_grid: grid,
        alpha1,
        multiplier,
        alpha0,
        indifference0,
        value0,
        curve0,
        curve1,
    })
}

/// One row of an oracle export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub tau: f64,
    pub regime: String,
    pub alpha_star: f64,
    pub value: f64,
}

impl RegimeSolution {
    /// First-period rows (`L`, `H`) then second-period rows (`L@t1`, `H@t1`).
    pub fn rows(&self) -> Vec<OracleRow> {
        let mut rows = Vec::new();
        for z in Regime::ALL {
            rows.push(OracleRow {
                tau: self.tau,
                regime: z.label().to_string(),
                alpha_star: self.alpha0[z.index()],
                value: self.value0[z.index()],
            });
        }
        for z in Regime::ALL {
            let i = z.index();
            rows.push(OracleRow {
                tau: self.tau,
                regime: format!("{}@t1", z.label()),
                alpha_star: self.alpha1[i].share(),
                value: self.curve1[i]
                    .iter()
                    .cloned()
                    .fold(f64::NEG_INFINITY, f64::max),
            });
        }
        rows
    }
}

/// Writes `tau,regime,alpha_star,value`.
pub fn write_oracle_csv<W: Write>(rows: &[OracleRow], mut out: W) -> Result<()> {
    writeln!(out, "tau,regime,alpha_star,value")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.tau, r.regime, r.alpha_star, r.value)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileChoice {
    pub tau: f64,
    pub quantile: f64,
    pub alpha: f64,
}

/// Optimal one-period risky share under several preference models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StaticChoice {
    pub mu: f64,
    pub sigma: f64,
    pub rf: f64,
    pub risk_neutral: f64,
    pub cara: f64,
    pub mean_variance: f64,
    pub quantile: Vec<QuantileChoice>,
}

/// Closed-form single-period decisions with a normal risky return.
/// Exact ties resolve to the risk-free asset.
pub fn static_choice_comparator(
    mu: f64,
    sigma: f64,
    rf: f64,
    taus: &[f64],
    cara_a: f64,
    mv_gamma: f64,
) -> Result<StaticChoice> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if !(cara_a > 0.0 && mv_gamma > 0.0) {
        return Err(Error::Domain(
            "risk-aversion coefficients must be positive".into(),
        ));
    }
    let premium = mu - rf;
    let quantile = taus
        .iter()
        .map(|&tau| {
            let q = mu + sigma * inv_std_normal_cdf(tau)?;
            Ok(QuantileChoice {
                tau,
                quantile: q,
                alpha: f64::from(q > rf),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StaticChoice {
        mu,
        sigma,
        rf,
        risk_neutral: f64::from(premium > 0.0),
        cara: (premium / (cara_a * sigma * sigma)).clamp(0.0, 1.0),
        mean_variance: (premium / (mv_gamma * sigma * sigma)).clamp(0.0, 1.0),
        quantile,
    })
}

/// Two-period problem with i.i.d. normal gross returns discretised on `n`
/// equiprobable atoms and a finite grid of risky shares.
#[derive(Clone, Debug)]
pub struct CornerProblem {
    pub mdp: TabularMdp,
    pub initial_state: usize,
    /// Atoms `mu + sigma * Phi^-1((i - 1/2) / n)`.
    pub atoms: Vec<f64>,
}

/// States: the start, one state per (first action, return atom) holding the
/// realised wealth, and absorbing terminal states per atom. Rewards are paid
/// on the final transition so that the start value is
/// `beta^2 Q_tau[W_2]` under the recursive quantile.
pub fn corner_rule_mdp(
    mu: f64,
    sigma: f64,
    rf: f64,
    beta: f64,
    w0: f64,
    atoms: usize,
    alphas: &[f64],
) -> Result<CornerProblem> {
    if atoms == 0 || alphas.is_empty() {
        return Err(Error::Domain(
            "need at least one atom and one action".into(),
        ));
    }
    let r: Vec<f64> = (0..atoms)
        .map(|i| Ok(mu + sigma * inv_std_normal_cdf((i as f64 + 0.5) / atoms as f64)?))
        .collect::<Result<_>>()?;
    let na = alphas.len();
    let mid = |a: usize, j: usize| 1 + a * atoms + j;
    let term = |j: usize| 1 + na * atoms + j;
    let states = 1 + na * atoms + atoms;
    let p = 1.0 / atoms as f64;
    let mut rows = vec![Vec::new(); states * na];
    for (a, _) in alphas.iter().enumerate() {
        rows[a] = (0..atoms)
            .map(|j| Outcome {
                next: mid(a, j),
                prob: p,
                reward: 0.0,
            })
            .collect();
    }
    for (a0, &al0) in alphas.iter().enumerate() {
        for (j, rj) in r.iter().enumerate() {
            let w1 = w0 * (al0 * rj + (1.0 - al0) * rf);
            let s = mid(a0, j);
            for (a1, &al1) in alphas.iter().enumerate() {
                rows[s * na + a1] = r
                    .iter()
                    .enumerate()
                    .map(|(k, rk)| Outcome {
                        next: term(k),
                        prob: p,
                        reward: beta * w1 * (al1 * rk + (1.0 - al1) * rf),
                    })
                    .collect();
            }
        }
    }
    for k in 0..atoms {
        for a in 0..na {
            rows[term(k) * na + a] = vec![Outcome {
                next: term(k),
                prob: 1.0,
                reward: 0.0,
            }];
        }
    }
    // equiprobable rows may miss 1 by rounding; push the slack onto the last atom
    for row in rows.iter_mut() {
        let total: f64 = row.iter().map(|o| o.prob).sum();
        if let Some(last) = row.last_mut() {
            last.prob += 1.0 - total;
        }
    }
    Ok(CornerProblem {
        mdp: TabularMdp::from_sparse(states, na, rows, beta)?,
        initial_state: 0,
        atoms: r,
    })
}
