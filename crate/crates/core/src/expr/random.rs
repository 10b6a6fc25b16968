use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BinaryOp, Expr, UnaryOp};

/// Operators the search may use. Defaults to the whole library.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperatorSet {
    pub binary: Vec<BinaryOp>,
    pub unary: Vec<UnaryOp>,
}

impl Default for OperatorSet {
    fn default() -> Self {
        Self {
            binary: BinaryOp::ALL.to_vec(),
            unary: UnaryOp::ALL.to_vec(),
        }
    }
}

impl OperatorSet {
    pub fn is_empty(&self) -> bool {
        self.binary.is_empty() && self.unary.is_empty()
    }
}

/// Feature or constant with equal probability; constants are standard normal.
pub fn random_leaf<R: Rng + ?Sized>(nfeatures: usize, rng: &mut R) -> Expr {
    if nfeatures > 0 && rng.random_bool(0.5) {
        Expr::feature(rng.random_range(0..nfeatures))
    } else {
        Expr::constant(rng.sample(StandardNormal))
    }
}

/// Random well-formed expression over the full operator library with at
/// most `max_size` nodes.
pub fn random_expr<R: Rng + ?Sized>(nfeatures: usize, max_size: usize, rng: &mut R) -> Expr {
    random_expr_with(&OperatorSet::default(), nfeatures, max_size, rng)
}

/// Draws a target size uniformly from `1..=max_size` and grows a tree of
/// exactly that size, falling back to the nearest feasible size when the
/// operator set cannot realize it (e.g. even sizes with no unary ops).
pub fn random_expr_with<R: Rng + ?Sized>(
    ops: &OperatorSet,
    nfeatures: usize,
    max_size: usize,
    rng: &mut R,
) -> Expr {
    let max_size = max_size.max(1);
    let target = rng.random_range(1..=max_size);
    grow(ops, nfeatures, target, rng)
}

fn grow<R: Rng + ?Sized>(ops: &OperatorSet, nfeatures: usize, size: usize, rng: &mut R) -> Expr {
    if size <= 1 || ops.is_empty() {
        return random_leaf(nfeatures, rng);
    }
    let can_unary = !ops.unary.is_empty();
    let can_binary = !ops.binary.is_empty() && size >= 3;
    let use_unary = match (can_unary, can_binary) {
        (true, true) => rng.random_bool(0.3),
        (true, false) => true,
        (false, true) => false,
        // Only binary ops and size 2: the best we can do is a leaf.
        (false, false) => return random_leaf(nfeatures, rng),
    };
    if use_unary {
        let op = *ops.unary.choose(rng).expect("non-empty");
        Expr::unary(op, grow(ops, nfeatures, size - 1, rng))
    } else {
        let op = *ops.binary.choose(rng).expect("non-empty");
        let left = rng.random_range(1..=size - 2);
        let right = size - 1 - left;
        Expr::binary(op, grow(ops, nfeatures, left, rng), grow(ops, nfeatures, right, rng))
    }
}
