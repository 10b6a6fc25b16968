//! Rank-based tests: Friedman across models, Wilcoxon signed-rank between
//! pairs, and Bonferroni correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size for which the Wilcoxon p-value is exact.
pub const WILCOXON_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Nonzero differences that entered the test.
    pub n: usize,
    pub exact: bool,
    /// Set when every difference is zero; the p-value is then 1 by
    /// convention.
    pub all_zero: bool,
}

pub fn bonferroni(alpha: f64, m: usize) -> f64 {
    alpha / m.max(1) as f64
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// `sum(t^3 - t)` over groups of tied values.
fn tie_term(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < v.len() {
        let mut j = i;
        while j + 1 < v.len() && v[j + 1] == v[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        total += t * t * t - t;
        i = j + 1;
    }
    total
}

/// Friedman chi-square over a row-per-dataset, column-per-model score
/// matrix, with average ranks for ties and the usual tie correction.
pub fn friedman_test(scores: &[Vec<f64>]) -> Result<TestResult> {
    let n = scores.len();
    let k = scores.first().map_or(0, Vec::len);
    if k < 2 {
        return Err(Error::InsufficientData("Friedman test needs at least 2 models".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData("Friedman test needs at least 2 datasets".into()));
    }
    if scores.iter().any(|r| r.len() != k) {
        return Err(Error::LengthMismatch {
            left: k,
            right: scores.iter().map(Vec::len).find(|&l| l != k).unwrap_or(k),
        });
    }
    let (nf, kf) = (n as f64, k as f64);
    let mut rank_sums = vec![0.0; k];
    let mut ties = 0.0;
    for row in scores {
        for (s, r) in rank_sums.iter_mut().zip(average_ranks(row)) {
            *s += r;
        }
        ties += tie_term(row);
    }
    let ss: f64 = rank_sums.iter().map(|r| r * r).sum();
    let numerator = 12.0 / (nf * kf * (kf + 1.0)) * ss - 3.0 * nf * (kf + 1.0);
    let denominator = 1.0 - ties / (nf * (kf * kf * kf - kf));
    if denominator <= 0.0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
        });
    }
    let statistic = (numerator / denominator).max(0.0);
    let chi = ChiSquared::new(kf - 1.0).expect("positive degrees of freedom");
    Ok(TestResult {
        statistic,
        p_value: chi.sf(statistic).clamp(0.0, 1.0),
    })
}

/// Two-sided signed-rank test on `a - b`. Zero differences are dropped;
/// `T` is the smaller of the positive and negative rank sums.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.is_empty() && !a.is_empty() {
        return Ok(WilcoxonResult {
            statistic: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
            all_zero: true,
        });
    }
    let n = d.len();
    if n < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 nonzero differences, got {n}"
        )));
    }
    let magnitudes: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&magnitudes);
    let plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let t = plus.min(total - plus);
    let (p_value, exact) = if n <= WILCOXON_EXACT_MAX {
        (exact_lower_tail(&ranks, t), true)
    } else {
        (normal_lower_tail(n, &magnitudes, t), false)
    };
    Ok(WilcoxonResult {
        statistic: t,
        p_value: (2.0 * p_value).min(1.0),
        n,
        exact,
        all_zero: false,
    })
}

/// `P(W+ <= t)` under the null, counting all `2^n` sign assignments of
/// the given (possibly half-integer) ranks.
fn exact_lower_tail(ranks: &[f64], t: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; max + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * t).round() as usize;
    let hits: f64 = counts[..=limit.min(max)].iter().sum();
    hits / 2f64.powi(ranks.len() as i32)
}

fn normal_lower_tail(n: usize, magnitudes: &[f64], t: f64) -> f64 {
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(magnitudes) / 48.0;
    if var <= 0.0 {
        return 0.5;
    }
    Normal::standard().cdf((t - mean) / var.sqrt())
}
