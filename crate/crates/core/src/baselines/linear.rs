//! Linear quantile regression.
//!
//! An asymmetrically reweighted least-squares pass finds a good starting
//! point; an exact vertex-exchange descent on the piecewise-linear objective
//! then walks to an optimal vertex, where `p` residuals are zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{mean_pinball, pinball, QuantileLevel};
use crate::matrix::Matrix;

const IRLS_ITERATIONS: usize = 50;
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantileModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub tau: QuantileLevel,
    /// Set when some feature columns were linearly dependent and pinned to 0.
    #[serde(default)]
    pub rank_deficient: bool,
}

impl LinearQuantileModel {
    pub fn nfeatures(&self) -> usize {
        self.coefficients.len()
    }

    /// One per feature plus one for the bias.
    pub fn parsimony(&self) -> u32 {
        self.coefficients.len() as u32 + 1
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.coefficients.len() {
            return Err(Error::ColumnCount {
                expected: self.coefficients.len(),
                found: x.ncols(),
            });
        }
        let mut out = vec![self.intercept; x.nrows()];
        for (j, &b) in self.coefficients.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(x.column(j)) {
                *o += b * v;
            }
        }
        Ok(out)
    }
}

/// Design matrix stored by rows: intercept first, then retained features.
struct Design {
    rows: Vec<Vec<f64>>,
    /// Original feature index of each non-intercept column.
    kept: Vec<usize>,
}

impl Design {
    fn p(&self) -> usize {
        self.kept.len() + 1
    }
}

/// Keeps the intercept and every feature column that is not (numerically)
/// in the span of the columns kept before it.
fn build_design(x: &Matrix) -> Design {
    let n = x.nrows();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut kept = Vec::new();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut r = col.to_vec();
        // Two Gram-Schmidt passes for numerical orthogonality.
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > RANK_TOLERANCE * norm0.max(1.0) {
            r.iter_mut().for_each(|v| *v /= norm);
            basis.push(r);
            kept.push(j);
        }
    }
    let rows = (0..n)
        .map(|i| {
            let mut row = Vec::with_capacity(kept.len() + 1);
            row.push(1.0);
            row.extend(kept.iter().map(|&j| x.get(i, j)));
            row
        })
        .collect();
    Design { rows, kept }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let p = b.len();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for col in 0..p {
        let piv = (col..p).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..p {
            let f = a[r][col] / a[col][col];
            if f != 0.0 {
                for c in col..p {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; p];
    for r in (0..p).rev() {
        let s: f64 = (r + 1..p).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Inverse of a square matrix, column by column.
fn invert(a: &[Vec<f64>]) -> Option<Vec<Vec<f64>>> {
    let p = a.len();
    let mut cols = Vec::with_capacity(p);
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        cols.push(solve(a.to_vec(), e)?);
    }
    // cols[j] is column j of the inverse.
    Some((0..p).map(|i| (0..p).map(|j| cols[j][i]).collect()).collect())
}

fn objective(tau: QuantileLevel, rows: &[Vec<f64>], y: &[f64], beta: &[f64]) -> f64 {
    rows.iter()
        .zip(y)
        .map(|(r, &v)| pinball(tau, v, dot(r, beta)))
        .sum::<f64>()
        / y.len() as f64
}

/// Weighted least squares with weights `tau / |r|` above and
/// `(1 - tau) / |r|` below the fit.
fn irls(tau: QuantileLevel, d: &Design, y: &[f64]) -> Option<Vec<f64>> {
    let p = d.p();
    let t = tau.value();
    let spread = y.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let floor = 1e-8 * spread;
    let mut beta: Option<Vec<f64>> = None;
    for _ in 0..IRLS_ITERATIONS {
        let mut a = vec![vec![0.0; p]; p];
        let mut b = vec![0.0; p];
        for (row, &yi) in d.rows.iter().zip(y) {
            let w = match &beta {
                None => 1.0,
                Some(bt) => {
                    let r = yi - dot(row, bt);
                    let side = if r >= 0.0 { t } else { 1.0 - t };
                    side / r.abs().max(floor)
                }
            };
            for i in 0..p {
                b[i] += w * row[i] * yi;
                for j in 0..p {
                    a[i][j] += w * row[i] * row[j];
                }
            }
        }
        let next = solve(a, b)?;
        let done = beta
            .as_ref()
            .is_some_and(|old| old.iter().zip(&next).all(|(o, n)| (o - n).abs() <= 1e-10 * (1.0 + o.abs())));
        beta = Some(next);
        if done {
            break;
        }
    }
    beta
}

/// `p` rows with the smallest absolute residual at `beta` that form a
/// nonsingular square system.
fn initial_basis(d: &Design, y: &[f64], beta: &[f64]) -> Option<Vec<usize>> {
    let p = d.p();
    let mut order: Vec<usize> = (0..y.len()).collect();
    let resid: Vec<f64> = d.rows.iter().zip(y).map(|(r, &v)| (v - dot(r, beta)).abs()).collect();
    order.sort_by(|&a, &b| resid[a].total_cmp(&resid[b]).then(a.cmp(&b)));
    let mut basis = Vec::with_capacity(p);
    let mut ortho: Vec<Vec<f64>> = Vec::new();
    for i in order {
        let row = &d.rows[i];
        let norm0 = dot(row, row).sqrt();
        let mut r = row.clone();
        for _ in 0..2 {
            for q in &ortho {
                let c = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let norm = dot(&r, &r).sqrt();
        if norm > 1e-8 * norm0.max(1.0) {
            r.iter_mut().for_each(|v| *v /= norm);
            ortho.push(r);
            basis.push(i);
            if basis.len() == p {
                return Some(basis);
            }
        }
    }
    None
}

/// Steepest-edge vertex exchange. From the vertex defined by `basis`, each
/// of the `2p` edges frees one basic residual in one direction; the most
/// negative directional derivative is followed with an exact line search
/// over residual sign changes.
fn vertex_descent(tau: QuantileLevel, d: &Design, y: &[f64], mut basis: Vec<usize>) -> Option<Vec<f64>> {
    let n = y.len();
    let p = d.p();
    let t = tau.value();
    let max_pivots = 50 * n + 100;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..max_pivots {
        let xb: Vec<Vec<f64>> = basis.iter().map(|&i| d.rows[i].clone()).collect();
        let inv = invert(&xb)?;
        let yb: Vec<f64> = basis.iter().map(|&i| y[i]).collect();
        let beta: Vec<f64> = (0..p).map(|i| dot(&inv[i], &yb)).collect();
        let obj = objective(tau, &d.rows, y, &beta);
        if best.as_ref().is_none_or(|(_, o)| obj < *o) {
            best = Some((beta.clone(), obj));
        }
        let resid: Vec<f64> = d.rows.iter().zip(y).map(|(r, &v)| v - dot(r, &beta)).collect();
        let scale = resid.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        let zero = 1e-12 * scale;
        let in_basis = {
            let mut f = vec![false; n];
            basis.iter().for_each(|&i| f[i] = true);
            f
        };
        // Direction that moves the residual of basis member k by -s per unit.
        let mut best_edge: Option<(f64, usize, Vec<f64>)> = None;
        for k in 0..p {
            let col: Vec<f64> = (0..p).map(|i| inv[i][k]).collect();
            let moves: Vec<f64> = d.rows.iter().map(|r| -dot(r, &col)).collect();
            for s in [1.0, -1.0] {
                // Basic residual k becomes -s t.
                let mut deriv = if s > 0.0 { 1.0 - t } else { t };
                for i in 0..n {
                    if in_basis[i] {
                        continue;
                    }
                    let dr = s * moves[i];
                    deriv += if resid[i] > zero {
                        t * dr
                    } else if resid[i] < -zero {
                        -(1.0 - t) * dr
                    } else {
                        t * dr.max(0.0) + (1.0 - t) * (-dr).max(0.0)
                    };
                }
                if deriv < -1e-12 && best_edge.as_ref().is_none_or(|(b, ..)| deriv < *b) {
                    let dres: Vec<f64> = moves.iter().map(|v| s * v).collect();
                    best_edge = Some((deriv, k, dres));
                }
            }
        }
        let Some((slope0, k, dres)) = best_edge else {
            return best.map(|(b, _)| b);
        };
        // Breakpoints where a non-basic residual crosses zero. Residuals
        // already at zero were charged one-sidedly in the slope and move away.
        let mut breaks: Vec<(f64, usize)> = (0..n)
            .filter(|&i| !in_basis[i] && dres[i] != 0.0 && resid[i].abs() > zero)
            .filter_map(|i| {
                let step = -resid[i] / dres[i];
                (step > 0.0).then_some((step, i))
            })
            .collect();
        breaks.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut slope = slope0;
        let mut entering = None;
        for &(_, i) in &breaks {
            // Crossing zero raises the slope by |d r_i| (tau + (1 - tau)).
            slope += dres[i].abs();
            if slope >= 0.0 {
                entering = Some(i);
                break;
            }
        }
        let Some(i) = entering else {
            // Unbounded descent cannot occur for a full-rank design.
            return best.map(|(b, _)| b);
        };
        basis[k] = i;
    }
    best.map(|(b, _)| b)
}

/// Fits `y ~ intercept + x beta` minimizing mean pinball loss.
pub fn fit_linear_quantile(x: &Matrix, y: &[f64], tau: QuantileLevel) -> Result<LinearQuantileModel> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::LengthMismatch { left: x.nrows(), right: n });
    }
    if n <= x.ncols() {
        return Err(Error::InsufficientData(format!(
            "linear quantile regression needs more rows ({n}) than features ({})",
            x.ncols()
        )));
    }
    let design = build_design(x);
    let rank_deficient = design.kept.len() < x.ncols();
    let start = irls(tau, &design, y).ok_or_else(|| Error::Model("singular design".into()))?;
    let start_obj = objective(tau, &design.rows, y, &start);
    let beta = match initial_basis(&design, y, &start).and_then(|b| vertex_descent(tau, &design, y, b)) {
        Some(b) if objective(tau, &design.rows, y, &b) <= start_obj => b,
        _ => start,
    };
    let mut coefficients = vec![0.0; x.ncols()];
    for (slot, &j) in design.kept.iter().enumerate() {
        coefficients[j] = beta[slot + 1];
    }
    Ok(LinearQuantileModel {
        coefficients,
        intercept: beta[0],
        tau,
        rank_deficient,
    })
}

/// Mean pinball loss of a fitted model on its training data.
pub fn training_loss(model: &LinearQuantileModel, x: &Matrix, y: &[f64]) -> Result<f64> {
    mean_pinball(model.tau, y, &model.predict(x)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::empirical_coverage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn q(t: f64) -> QuantileLevel {
        QuantileLevel::new(t).unwrap()
    }

    /// Exhaustive optimum: every vertex interpolates some `p` rows.
    fn vertex_oracle(x: &Matrix, y: &[f64], tau: QuantileLevel) -> f64 {
        let n = y.len();
        let p = x.ncols() + 1;
        let row = |i: usize| {
            let mut r = vec![1.0];
            r.extend(x.row(i));
            r
        };
        let mut best = f64::INFINITY;
        let mut idx: Vec<usize> = (0..p).collect();
        loop {
            let a: Vec<Vec<f64>> = idx.iter().map(|&i| row(i)).collect();
            let b: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            if let Some(beta) = solve(a, b) {
                let loss: f64 = (0..n).map(|i| pinball(tau, y[i], dot(&row(i), &beta))).sum::<f64>() / n as f64;
                best = best.min(loss);
            }
            // Next combination in lexicographic order.
            let mut k = p;
            while k > 0 && idx[k - 1] == n - p + k - 1 {
                k -= 1;
            }
            if k == 0 {
                return best;
            }
            idx[k - 1] += 1;
            for j in k..p {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn exact_line_is_interpolated() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 * 0.37).collect();
        let y: Vec<f64> = xs.iter().map(|v| 2.0 + 3.0 * v).collect();
        let x = Matrix::from_columns(vec![xs]).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let m = fit_linear_quantile(&x, &y, q(t)).unwrap();
            assert!((m.coefficients[0] - 3.0).abs() < 1e-6, "{m:?}");
            assert!((m.intercept - 2.0).abs() < 1e-6, "{m:?}");
            assert_eq!(m.parsimony(), 2);
        }
    }

    #[test]
    fn constant_feature_reduces_to_order_statistic() {
        let y: Vec<f64> = (1..=10).map(f64::from).collect();
        let x = Matrix::from_columns(vec![vec![4.0; 10]]).unwrap();
        let m = fit_linear_quantile(&x, &y, q(0.9)).unwrap();
        assert!(m.rank_deficient);
        assert_eq!(m.coefficients, vec![0.0]);
        // Any value in [9, 10] minimizes; the objective pins this down.
        let best = mean_pinball(q(0.9), &y, &[9.0; 10]).unwrap();
        let got = mean_pinball(q(0.9), &y, &m.predict(&x).unwrap()).unwrap();
        assert!((got - best).abs() < 1e-9);
        assert!((9.0..=10.0).contains(&m.intercept), "{}", m.intercept);
    }

    #[test]
    fn matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in [0.5, 0.9, 0.25] {
            for _ in 0..4 {
                let n = 30;
                let cols: Vec<Vec<f64>> = (0..2).map(|_| (0..n).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect()).collect();
                let y: Vec<f64> = (0..n)
                    .map(|i| 1.0 + cols[0][i] - 0.5 * cols[1][i] + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let x = Matrix::from_columns(cols).unwrap();
                let m = fit_linear_quantile(&x, &y, q(t)).unwrap();
                let got = training_loss(&m, &x, &y).unwrap();
                let oracle = vertex_oracle(&x, &y, q(t));
                assert!(got - oracle <= 1e-6, "tau {t}: {got} vs {oracle}");
            }
        }
    }

    #[test]
    fn training_coverage_is_near_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 200;
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = xs.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
        let x = Matrix::from_columns(vec![xs]).unwrap();
        for t in [0.1, 0.5, 0.9] {
            let m = fit_linear_quantile(&x, &y, q(t)).unwrap();
            let cov = empirical_coverage(&y, &m.predict(&x).unwrap()).unwrap();
            assert!((cov - t).abs() <= 2.0 / n as f64 + 1e-12, "tau {t}: {cov}");
        }
    }

    #[test]
    fn zero_model_predicts_intercept() {
        let m = LinearQuantileModel {
            coefficients: vec![0.0, 0.0],
            intercept: 1.5,
            tau: q(0.5),
            rank_deficient: false,
        };
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.predict(&x).unwrap(), vec![1.5, 1.5]);
        assert!(m.predict(&Matrix::from_rows(&[[1.0]]).unwrap()).is_err());
    }

    #[test]
    fn too_few_rows() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]).unwrap();
        assert!(fit_linear_quantile(&x, &[1.0, 2.0], q(0.5)).is_err());
    }
}
