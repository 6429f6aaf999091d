//! Performance and tail-risk statistics on daily return series, plus weight
//! and inverse-CDF summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::critic::{order_violation, CriticParams};
use crate::error::{Error, Result};
use crate::mathcore::inv_std_normal_cdf;
use crate::quantile_dp::empirical_rank;

pub const TRADING_DAYS: f64 = 252.0;
pub const MIN_OBSERVATIONS: usize = 30;

/// Row labels of the metrics table, in output order.
pub const METRIC_ROWS: [&str; 10] = [
    "Ann. Mean (%)",
    "Ann. StdDev (%)",
    "Ann. SemiDev (%)",
    "CVaR 95% (%)",
    "Avg DD (%)",
    "VaR 95% (%)",
    "Sharpe (ann.)",
    "Sortino (ann.)",
    "Tail-Adj Sharpe (CVaR95)",
    "Tail-Adj Sharpe (mVaR95)",
];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrawdownMode {
    /// Mean drawdown level over every day, zero-drawdown days included.
    #[default]
    AllDays,
    /// Mean over days spent below a previous peak only.
    Spells,
}

/// Percentages are in percent units; ratios are unitless. Ratios with a zero
/// denominator are reported as signed infinity (or 0 for a zero numerator).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    pub ann_mean: f64,
    pub ann_std: f64,
    pub ann_semidev: f64,
    pub cvar95: f64,
    pub avg_drawdown: f64,
    pub var95: f64,
    pub sharpe: f64,
    pub sortino: f64,
    pub tail_sharpe_cvar: f64,
    pub tail_sharpe_mvar: f64,
    /// Cornish-Fisher daily 5% quantile, in percent.
    pub mvar95: f64,
}

impl PerfSummary {
    /// Values in [`METRIC_ROWS`] order.
    pub fn rows(&self) -> [f64; 10] {
        [
            self.ann_mean,
            self.ann_std,
            self.ann_semidev,
            self.cvar95,
            self.avg_drawdown,
            self.var95,
            self.sharpe,
            self.sortino,
            self.tail_sharpe_cvar,
            self.tail_sharpe_mvar,
        ]
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den != 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    }
}

fn moments(r: &[f64]) -> (f64, f64, f64, f64) {
    let n = r.len() as f64;
    let mean = r.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in r {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skew, exkurt) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    (mean, m2, skew, exkurt)
}

/// Cornish-Fisher adjusted standard-normal quantile.
pub fn cornish_fisher_z(z: f64, skew: f64, exkurt: f64) -> f64 {
    z + (z * z - 1.0) * skew / 6.0 + (z.powi(3) - 3.0 * z) * exkurt / 24.0
        - (2.0 * z.powi(3) - 5.0 * z) * skew * skew / 36.0
}

/// Empirical 5% quantile (left-continuous inverse) and the mean of returns
/// at or below it.
pub fn var_cvar(returns: &[f64], level: f64) -> Result<(f64, f64)> {
    if returns.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut sorted = returns.to_vec();
    sorted.sort_by(f64::total_cmp);
    let var = sorted[empirical_rank(sorted.len(), level)];
    let tail: Vec<f64> = sorted.iter().copied().take_while(|r| *r <= var).collect();
    let cvar = tail.iter().sum::<f64>() / tail.len() as f64;
    Ok((var, cvar))
}

/// Drawdown levels `1 - W_t / max_{s<=t} W_s` of the compounded wealth path
/// starting at 1.
pub fn drawdowns(returns: &[f64]) -> Vec<f64> {
    let mut wealth = 1.0f64;
    let mut peak = 1.0f64;
    returns
        .iter()
        .map(|r| {
            wealth *= 1.0 + r;
            peak = peak.max(wealth);
            1.0 - wealth / peak
        })
        .collect()
}

pub fn performance_summary(returns: &[f64]) -> Result<PerfSummary> {
    performance_summary_with(returns, DrawdownMode::AllDays)
}

pub fn performance_summary_with(returns: &[f64], mode: DrawdownMode) -> Result<PerfSummary> {
    if returns.len() < MIN_OBSERVATIONS {
        return Err(Error::InsufficientData {
            needed: MIN_OBSERVATIONS,
            got: returns.len(),
        });
    }
    if returns.iter().any(|r| !r.is_finite()) {
        return Err(Error::Data("non-finite return in series".into()));
    }
    let n = returns.len() as f64;
    let (mean, m2, skew, exkurt) = moments(returns);
    let sd = (m2 * n / (n - 1.0)).sqrt();
    let semi = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / n).sqrt();
    let (var, cvar) = var_cvar(returns, 0.05)?;
    let dd = drawdowns(returns);
    let avg_dd = match mode {
        DrawdownMode::AllDays => dd.iter().sum::<f64>() / n,
        DrawdownMode::Spells => {
            let under: Vec<f64> = dd.iter().copied().filter(|d| *d > 0.0).collect();
            if under.is_empty() {
                0.0
            } else {
                under.iter().sum::<f64>() / under.len() as f64
            }
        }
    };
    let z = inv_std_normal_cdf(0.05)?;
    let mvar = mean + cornish_fisher_z(z, skew, exkurt) * sd;

    let ann_mean = 100.0 * TRADING_DAYS * mean;
    let ann_std = 100.0 * TRADING_DAYS.sqrt() * sd;
    let ann_semidev = 100.0 * TRADING_DAYS.sqrt() * semi;
    Ok(PerfSummary {
        ann_mean,
        ann_std,
        ann_semidev,
        cvar95: 100.0 * cvar,
        avg_drawdown: 100.0 * avg_dd,
        var95: 100.0 * var,
        sharpe: ratio(ann_mean, ann_std),
        sortino: ratio(ann_mean, ann_semidev),
        tail_sharpe_cvar: ratio(ann_mean, (100.0 * cvar).abs()),
        tail_sharpe_mvar: ratio(ann_mean, (100.0 * mvar).abs()),
        mvar95: 100.0 * mvar,
    })
}

/// One column per strategy under the `metric` label column.
pub fn write_metrics_csv<W: Write>(columns: &[(String, PerfSummary)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["metric".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    let rows: Vec<[f64; 10]> = columns.iter().map(|(_, s)| s.rows()).collect();
    for (i, label) in METRIC_ROWS.iter().enumerate() {
        let mut rec = vec![label.to_string()];
        rec.extend(rows.iter().map(|r| format_value(r[i])));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn format_value(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else {
        v.to_string()
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Data(e.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub overall: Vec<f64>,
    /// `(regime index, mean weights, count)` for every regime that occurs.
    pub by_regime: Vec<(usize, Vec<f64>, usize)>,
}

/// Time-averaged weights, optionally grouped by regime.
pub fn weight_summary(weights: &[Vec<f64>], regimes: Option<&[usize]>) -> Result<WeightSummary> {
    let first = weights
        .first()
        .ok_or(Error::InsufficientData { needed: 1, got: 0 })?;
    let dim = first.len();
    if weights.iter().any(|w| w.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: weights.iter().map(Vec::len).find(|l| *l != dim).unwrap_or(dim),
        });
    }
    let mean = |rows: &mut dyn Iterator<Item = &Vec<f64>>| {
        let mut acc = vec![0.0; dim];
        let mut count = 0usize;
        for w in rows {
            acc.iter_mut().zip(w).for_each(|(a, x)| *a += x);
            count += 1;
        }
        acc.iter_mut().for_each(|a| *a /= count as f64);
        (acc, count)
    };
    let (overall, _) = mean(&mut weights.iter());
    let mut by_regime = Vec::new();
    if let Some(labels) = regimes {
        if labels.len() != weights.len() {
            return Err(Error::Shape {
                expected: weights.len(),
                got: labels.len(),
            });
        }
        let k = labels.iter().copied().max().unwrap_or(0) + 1;
        for regime in 0..k {
            let mut rows = weights.iter().zip(labels).filter(|(_, l)| **l == regime).map(|(w, _)| w);
            let (m, count) = mean(&mut rows);
            if count > 0 {
                by_regime.push((regime, m, count));
            }
        }
    }
    Ok(WeightSummary { overall, by_regime })
}

/// Per-head mean of critic values over a set of states.
pub fn icdf_report(critic: &CriticParams, states: &[Vec<f64>]) -> Result<Vec<f64>> {
    if states.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let p = critic.heads();
    let mut acc = vec![0.0; p];
    for s in states {
        let v = critic.value_vector(s)?;
        acc.iter_mut().zip(&v).for_each(|(a, x)| *a += x);
    }
    acc.iter_mut().for_each(|a| *a /= states.len() as f64);
    Ok(acc)
}

/// Quantile-crossing diagnostics over a set of head vectors.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingStats {
    pub states: usize,
    /// Fraction of states with any decreasing adjacent pair of heads.
    pub fraction: f64,
    /// Mean total violation over all states divided by the range of head values.
    pub relative_magnitude: f64,
}

pub fn crossing_stats(values: &[Vec<f64>]) -> Result<CrossingStats> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut crossed = 0usize;
    let mut total = 0.0;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        let viol = order_violation(v);
        if viol > 0.0 {
            crossed += 1;
        }
        total += viol;
        for x in v {
            lo = lo.min(*x);
            hi = hi.max(*x);
        }
    }
    let n = values.len() as f64;
    let range = hi - lo;
    Ok(CrossingStats {
        states: values.len(),
        fraction: crossed as f64 / n,
        relative_magnitude: if range > 0.0 { total / n / range } else { 0.0 },
    })
}
