//! Pinball loss and the evaluation metrics built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Quantile level strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(tau: f64) -> Result<Self> {
        if tau > 0.0 && tau < 1.0 {
            Ok(Self(tau))
        } else {
            Err(Error::InvalidQuantile(tau))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The reflected level `1 - tau`.
    pub fn complement(self) -> Self {
        Self(1.0 - self.0)
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

/// `max(tau * e, (tau - 1) * e)` with `e = y - yhat`. Under-prediction is
/// charged `tau` per unit, over-prediction `1 - tau`. Non-finite inputs give
/// `+inf`.
#[inline]
pub fn pinball(tau: QuantileLevel, y: f64, yhat: f64) -> f64 {
    let e = y - yhat;
    if !e.is_finite() {
        return f64::INFINITY;
    }
    let t = tau.0;
    (t * e).max((t - 1.0) * e)
}

pub fn mean_pinball(tau: QuantileLevel, y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    Ok(mean_pinball_unchecked(tau, y, yhat))
}

#[inline]
pub(crate) fn mean_pinball_unchecked(tau: QuantileLevel, y: &[f64], yhat: &[f64]) -> f64 {
    let t = tau.0;
    // Neumaier-compensated sum.
    let (mut total, mut carry) = (0.0f64, 0.0f64);
    for (&a, &b) in y.iter().zip(yhat) {
        let e = a - b;
        let v = (t * e).max((t - 1.0) * e);
        let next = total + v;
        carry += if total.abs() >= v.abs() {
            (total - next) + v
        } else {
            (v - next) + total
        };
        total = next;
    }
    let mean = (total + carry) / y.len() as f64;
    if mean.is_finite() {
        mean
    } else {
        f64::INFINITY
    }
}

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            left: y.len(),
            right: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyInput("no observations".into()));
    }
    Ok(())
}

pub fn target_range(y: &[f64]) -> f64 {
    let (lo, hi) = y
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Mean pinball loss divided by the range of `y`.
pub fn normalized_quantile_loss(tau: QuantileLevel, y: &[f64], yhat: &[f64]) -> Result<f64> {
    let loss = mean_pinball(tau, y, yhat)?;
    let range = target_range(y);
    if !(range > 0.0) {
        return Err(Error::DegenerateRange);
    }
    Ok(loss / range)
}

/// Fraction of rows with `y <= yhat`; ties count as covered.
pub fn empirical_coverage(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let covered = y.iter().zip(yhat).filter(|(a, b)| a <= b).count();
    Ok(covered as f64 / y.len() as f64)
}

pub fn absolute_coverage_error(tau: QuantileLevel, coverage: f64) -> f64 {
    (coverage - tau.0).abs()
}

/// Metrics for one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub nql: f64,
    pub ace: f64,
    pub coverage: f64,
    pub parsimony: Option<u32>,
    pub mean_pinball: f64,
}

impl MetricRecord {
    pub fn compute(tau: QuantileLevel, y: &[f64], yhat: &[f64], parsimony: Option<u32>) -> Result<Self> {
        let mean_pinball = mean_pinball(tau, y, yhat)?;
        let nql = normalized_quantile_loss(tau, y, yhat)?;
        let coverage = empirical_coverage(y, yhat)?;
        Ok(Self {
            nql,
            ace: absolute_coverage_error(tau, coverage),
            coverage,
            parsimony,
            mean_pinball,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert!(QuantileLevel::new(1.5).is_err());
        assert_eq!(q(0.9).value(), 0.9);
    }

    #[test]
    fn asymmetry_at_ninety() {
        let under = pinball(q(0.9), 1.0, 0.0);
        let over = pinball(q(0.9), 0.0, 1.0);
        assert_eq!(under, 0.9);
        assert!((over - 0.1).abs() < 1e-15);
        assert!((under / over - 9.0).abs() < 1e-12);
    }

    #[test]
    fn median_is_half_absolute_error() {
        assert_eq!(pinball(q(0.5), 3.0, 1.0), 1.0);
        assert_eq!(pinball(q(0.5), 1.0, 3.0), 1.0);
    }

    #[test]
    fn non_finite_is_worst_case() {
        assert_eq!(pinball(q(0.5), 1.0, f64::NAN), f64::INFINITY);
        assert_eq!(pinball(q(0.5), 1.0, f64::INFINITY), f64::INFINITY);
    }

    #[test]
    fn quantile_dependence_examples() {
        // 50 unit under-predictions and 50 unit over-predictions at the median.
        let y = vec![1.0; 100];
        let yhat: Vec<f64> = (0..100).map(|i| if i < 50 { 0.0 } else { 2.0 }).collect();
        assert_eq!(mean_pinball(q(0.5), &y, &yhat).unwrap(), 0.5);
        // 10 under and 90 over at tau = .9.
        let yhat: Vec<f64> = (0..100).map(|i| if i < 10 { 0.0 } else { 2.0 }).collect();
        assert_eq!(mean_pinball(q(0.9), &y, &yhat).unwrap(), 0.18);
    }

    #[test]
    fn nql_worked_example() {
        let y = [0.0, 1.0, 2.0, 3.0];
        let yhat = [0.0; 4];
        let brute: f64 = y.iter().map(|&v| 0.5 * v).sum::<f64>() / 4.0;
        assert_eq!(brute, 0.75);
        assert_eq!(mean_pinball(q(0.5), &y, &yhat).unwrap(), 0.75);
        assert_eq!(normalized_quantile_loss(q(0.5), &y, &yhat).unwrap(), 0.25);
        assert_eq!(normalized_quantile_loss(q(0.3), &y, &y).unwrap(), 0.0);
        assert!(matches!(
            normalized_quantile_loss(q(0.5), &[2.0, 2.0], &[1.0, 1.0]),
            Err(Error::DegenerateRange)
        ));
    }

    #[test]
    fn coverage_examples() {
        assert_eq!(empirical_coverage(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 2.0, 5.0]).unwrap(), 0.75);
        assert_eq!(empirical_coverage(&[1.0, 2.0], &[2.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(empirical_coverage(&[1.0], &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
        assert!((absolute_coverage_error(q(0.9), 0.75) - 0.15).abs() < 1e-12);
        assert!((absolute_coverage_error(q(0.9), 0.91) - 0.01).abs() < 1e-12);
        assert_eq!(absolute_coverage_error(q(0.9), 0.9), 0.0);
    }

    #[test]
    fn metric_record_ace_is_exact() {
        let r = MetricRecord::compute(q(0.9), &[1.0, 2.0, 3.0], &[1.0, 1.0, 4.0], Some(3)).unwrap();
        assert_eq!(r.ace, (r.coverage - 0.9).abs());
        assert!(r.nql >= 0.0);
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_at_exact(t in 0.001f64..0.999, y in -1e6f64..1e6, yhat in -1e6f64..1e6) {
            prop_assert!(pinball(q(t), y, yhat) >= 0.0);
            prop_assert_eq!(pinball(q(t), y, y), 0.0);
        }

        #[test]
        fn convex_in_prediction(t in 0.001f64..0.999, y in -1e3f64..1e3, a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let tau = q(t);
            let mid = pinball(tau, y, 0.5 * (a + b));
            let avg = 0.5 * (pinball(tau, y, a) + pinball(tau, y, b));
            prop_assert!(mid <= avg + 1e-9);
        }

        #[test]
        fn reflection_symmetry(t in 0.001f64..0.999, y in -1e3f64..1e3, yhat in -1e3f64..1e3) {
            let lhs = pinball(q(t), y, yhat);
            let rhs = pinball(q(t).complement(), -y, -yhat);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn scale_equivariance(
            t in 0.01f64..0.99,
            c in 0.01f64..100.0,
            pairs in proptest::collection::vec((-100f64..100.0, -100f64..100.0), 2..40),
        ) {
            let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assume!(target_range(&y) > 1e-6);
            let ys: Vec<f64> = y.iter().map(|v| v * c).collect();
            let yhats: Vec<f64> = yhat.iter().map(|v| v * c).collect();
            let base = mean_pinball(q(t), &y, &yhat).unwrap();
            let scaled = mean_pinball(q(t), &ys, &yhats).unwrap();
            prop_assert!((scaled - c * base).abs() <= 1e-9 * (1.0 + scaled.abs()));
            let n0 = normalized_quantile_loss(q(t), &y, &yhat).unwrap();
            let n1 = normalized_quantile_loss(q(t), &ys, &yhats).unwrap();
            prop_assert!((n0 - n1).abs() <= 1e-9 * (1.0 + n0.abs()));
        }
    }
}
