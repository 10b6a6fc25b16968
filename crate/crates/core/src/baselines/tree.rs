//! Quantile decision tree.
//!
//! Splits are grown greedily, choosing the threshold that minimizes the
//! summed pinball loss of the two children. Each leaf predicts the lower
//! order statistic `y_(ceil(tau m))` of its `m` training targets, which
//! minimizes the pinball loss over constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::QuantileLevel;
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
        samples: usize,
    },
    /// Rows with `x[feature] < threshold` go to `left`.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Nodes are stored flat; index 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileTreeModel {
    pub nodes: Vec<TreeNode>,
    pub tau: QuantileLevel,
    pub min_samples_leaf: usize,
    pub nfeatures: usize,
}

impl QuantileTreeModel {
    /// Internal plus leaf nodes.
    pub fn parsimony(&self) -> u32 {
        self.nodes.len() as u32
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value, .. } => return value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] < threshold { left } else { right },
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.nfeatures {
            return Err(Error::ColumnCount {
                expected: self.nfeatures,
                found: x.ncols(),
            });
        }
        Ok((0..x.nrows()).map(|i| self.predict_row(&x.row(i))).collect())
    }
}

/// 1-based index `ceil(tau m)` of the order statistic a leaf predicts.
pub fn order_statistic_index(tau: QuantileLevel, m: usize) -> usize {
    ((tau.value() * m as f64).ceil() as usize).clamp(1, m)
}

/// Lower `tau` order statistic of `values` (which need not be sorted).
pub fn leaf_quantile(tau: QuantileLevel, values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[order_statistic_index(tau, v.len()) - 1]
}

/// Counts and sums over target ranks, for order statistics of growing or
/// shrinking row sets.
struct Fenwick {
    count: Vec<i64>,
    sum: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self {
            count: vec![0; n + 1],
            sum: vec![0.0; n + 1],
        }
    }

    fn add(&mut self, rank: usize, value: f64, sign: i64) {
        let mut i = rank + 1;
        while i < self.count.len() {
            self.count[i] += sign;
            self.sum[i] += sign as f64 * value;
            i += i & i.wrapping_neg();
        }
    }

    /// Count and sum over ranks `< rank`.
    fn prefix(&self, rank: usize) -> (i64, f64) {
        let (mut c, mut s) = (0, 0.0);
        let mut i = rank;
        while i > 0 {
            c += self.count[i];
            s += self.sum[i];
            i -= i & i.wrapping_neg();
        }
        (c, s)
    }

    /// Rank holding the `k`-th (1-based) present element.
    fn kth(&self, mut k: i64) -> usize {
        let n = self.count.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.count[next] < k {
                pos = next;
                k -= self.count[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Pinball loss of a row set around its leaf quantile, given rank-sorted
/// targets and the Fenwick summary of the set.
fn set_loss(tau: f64, sorted: &[f64], fw: &Fenwick, m: usize, total_sum: f64, tau_level: QuantileLevel) -> f64 {
    let k = order_statistic_index(tau_level, m) as i64;
    let r = fw.kth(k);
    let q = sorted[r];
    let (below_n, below_s) = fw.prefix(r);
    let (upto_n, upto_s) = fw.prefix(r + 1);
    let above_n = m as i64 - upto_n;
    let above_s = total_sum - upto_s;
    tau * (above_s - q * above_n as f64) + (1.0 - tau) * (q * below_n as f64 - below_s)
}

struct Split {
    feature: usize,
    threshold: f64,
    loss: f64,
    left: Vec<usize>,
    right: Vec<usize>,
}

/// Best split of `rows`, if any, with both sides holding at least
/// `min_leaf` rows. Ties go to the lower feature index, then the lower
/// threshold.
fn best_split(x: &Matrix, y: &[f64], rows: &[usize], tau: QuantileLevel, min_leaf: usize) -> Option<Split> {
    let m = rows.len();
    if m < 2 * min_leaf.max(1) {
        return None;
    }
    let t = tau.value();
    let mut by_y: Vec<usize> = (0..m).collect();
    by_y.sort_by(|&a, &b| y[rows[a]].total_cmp(&y[rows[b]]).then(a.cmp(&b)));
    let mut rank = vec![0; m];
    for (r, &local) in by_y.iter().enumerate() {
        rank[local] = r;
    }
    let sorted: Vec<f64> = by_y.iter().map(|&l| y[rows[l]]).collect();
    let total: f64 = sorted.iter().sum();
    let mut best: Option<(f64, usize, usize, f64)> = None;
    let sorted_by = |j: usize| {
        let col = x.column(j);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| col[rows[a]].total_cmp(&col[rows[b]]).then(a.cmp(&b)));
        order
    };
    for j in 0..x.ncols() {
        let col = x.column(j);
        let order = sorted_by(j);
        let mut left = Fenwick::new(m);
        let mut right = Fenwick::new(m);
        for l in 0..m {
            right.add(rank[l], sorted[rank[l]], 1);
        }
        let mut left_sum = 0.0;
        for pos in 0..m - 1 {
            let l = order[pos];
            left.add(rank[l], sorted[rank[l]], 1);
            right.add(rank[l], sorted[rank[l]], -1);
            left_sum += sorted[rank[l]];
            let nl = pos + 1;
            let nr = m - nl;
            let (a, b) = (col[rows[order[pos]]], col[rows[order[pos + 1]]]);
            if nl < min_leaf || nr < min_leaf || a == b {
                continue;
            }
            let loss = set_loss(t, &sorted, &left, nl, left_sum, tau) + set_loss(t, &sorted, &right, nr, total - left_sum, tau);
            if best.as_ref().is_none_or(|(bl, ..)| loss < *bl) {
                let threshold = a + (b - a) / 2.0;
                best = Some((loss, j, nl, threshold));
            }
        }
    }
    let (loss, feature, nl, threshold) = best?;
    let order = sorted_by(feature);
    Some(Split {
        feature,
        threshold,
        loss,
        left: order[..nl].iter().map(|&l| rows[l]).collect(),
        right: order[nl..].iter().map(|&l| rows[l]).collect(),
    })
}

fn node_loss(tau: QuantileLevel, values: &[f64]) -> f64 {
    let q = leaf_quantile(tau, values);
    values.iter().map(|&v| crate::loss::pinball(tau, v, q)).sum()
}

/// Grows a tree top-down until no split lowers the loss or every
/// candidate split would leave fewer than `min_samples_leaf` rows in a leaf.
/// Fewer than `2 * min_samples_leaf` rows give a single leaf.
pub fn fit_quantile_tree(x: &Matrix, y: &[f64], tau: QuantileLevel, min_samples_leaf: usize) -> Result<QuantileTreeModel> {
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::LengthMismatch { left: x.nrows(), right: n });
    }
    let min_leaf = min_samples_leaf.max(1);
    if n == 0 {
        return Err(Error::EmptyInput("quantile tree needs at least one row".into()));
    }
    let mut nodes: Vec<TreeNode> = Vec::new();
    // (node index, rows) awaiting expansion; processed depth-first.
    nodes.push(TreeNode::Leaf { value: 0.0, samples: n });
    let mut stack = vec![(0usize, (0..n).collect::<Vec<usize>>())];
    while let Some((idx, rows)) = stack.pop() {
        let values: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let own = node_loss(tau, &values);
        let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        match best_split(x, y, &rows, tau, min_leaf) {
            Some(s) if s.loss < own - 1e-12 * scale * rows.len() as f64 => {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(TreeNode::Leaf {
                    value: 0.0,
                    samples: s.left.len(),
                });
                nodes.push(TreeNode::Leaf {
                    value: 0.0,
                    samples: s.right.len(),
                });
                nodes[idx] = TreeNode::Split {
                    feature: s.feature,
                    threshold: s.threshold,
                    left,
                    right,
                };
                stack.push((right, s.right));
                stack.push((left, s.left));
            }
            _ => {
                nodes[idx] = TreeNode::Leaf {
                    value: leaf_quantile(tau, &values),
                    samples: rows.len(),
                };
            }
        }
    }
    Ok(QuantileTreeModel {
        nodes,
        tau,
        min_samples_leaf: min_leaf,
        nfeatures: x.ncols(),
    })
}

/// Candidate leaf sizes for the tuned tree.
pub const LEAF_GRID: [usize; 5] = [1, 5, 10, 20, 50];

/// Picks `min_samples_leaf` from `grid` by inner `folds`-fold mean pinball
/// loss and refits on all rows. Ties go to the larger leaf size.
pub fn fit_quantile_tree_grid(
    x: &Matrix,
    y: &[f64],
    tau: QuantileLevel,
    grid: &[usize],
    folds: usize,
    seed: u64,
) -> Result<QuantileTreeModel> {
    if grid.is_empty() {
        return Err(Error::Config("leaf grid is empty".into()));
    }
    let n = y.len();
    if n < folds.max(2) {
        return fit_quantile_tree(x, y, tau, grid[0]);
    }
    let plan = crate::data::kfold(n, folds, seed)?;
    let mut best = (f64::INFINITY, grid[0]);
    for &leaf in grid {
        let mut total = 0.0;
        for f in 0..folds {
            let train = plan.train_indices(f);
            let test = plan.test_indices(f);
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = fit_quantile_tree(&x.select_rows(&train), &ytr, tau, leaf)?;
            total += test
                .iter()
                .map(|&i| crate::loss::pinball(tau, y[i], model.predict_row(&x.row(i))))
                .sum::<f64>();
        }
        let loss = total / n as f64;
        if loss < best.0 || (loss == best.0 && leaf > best.1) {
            best = (loss, leaf);
        }
    }
    fit_quantile_tree(x, y, tau, best.1)
}
