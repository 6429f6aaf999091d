use crate::error::{check_tau, Result};

/// Pinball (quantile) loss `|tau - 1{delta < 0}| * |delta|`.
pub fn pinball_loss(delta: f64, tau: f64) -> Result<f64> {
    check_tau(tau)?;
    Ok(pinball_unchecked(delta, tau))
}

#[inline]
pub(crate) fn pinball_unchecked(delta: f64, tau: f64) -> f64 {
    if delta >= 0.0 {
        tau * delta
    } else {
        (tau - 1.0) * delta
    }
}

/// Derivative of the pinball loss with respect to `delta`.
/// At `delta == 0` the nonnegative branch is used.
#[inline]
pub fn pinball_derivative(delta: f64, tau: f64) -> f64 {
    if delta >= 0.0 {
        tau
    } else {
        tau - 1.0
    }
}

/// Numerically stable softmax.
pub fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = raw.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_loss(0.0, 0.3).unwrap(), 0.0);
        assert!((pinball_loss(2.0, 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert!((pinball_loss(-2.0, 0.1).unwrap() - 1.8).abs() < 1e-15);
        assert!(pinball_loss(1.0, 1.0).is_err());
    }

    #[test]
    fn softmax_sums_to_one() {
        let w = softmax(&[1000.0, 999.0, -5.0]);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    proptest! {
        #[test]
        fn pinball_convex(d1 in -50.0..50.0f64, d2 in -50.0..50.0f64, lam in 0.0..1.0f64, tau in 0.01..0.99f64) {
            let mix = pinball_unchecked(lam * d1 + (1.0 - lam) * d2, tau);
            let chord = lam * pinball_unchecked(d1, tau) + (1.0 - lam) * pinball_unchecked(d2, tau);
            prop_assert!(mix <= chord + 1e-12);
        }

        #[test]
        fn pinball_nonnegative_zero_iff_zero(d in -10.0..10.0f64, tau in 0.01..0.99f64) {
            let l = pinball_unchecked(d, tau);
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, d == 0.0);
        }

        #[test]
        fn softmax_shift_invariant(raw in prop::collection::vec(-20.0..20.0f64, 1..6), c in -100.0..100.0f64) {
            let a = softmax(&raw);
            let shifted: Vec<f64> = raw.iter().map(|x| x + c).collect();
            let b = softmax(&shifted);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
