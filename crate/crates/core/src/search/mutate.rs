//! Structural and numeric variation operators.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;

use super::config::MutationWeights;
use crate::expr::{parsimony, random_expr_with, random_leaf, simplify, BinaryOp, ComplexityTable, Expr, OperatorSet};

/// Attempts made before an oversize result falls back to the parent.
pub const MAX_ATTEMPTS: usize = 10;
/// Probability that a constant mutation also flips the sign.
const NEGATE_PROBABILITY: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MutationKind {
    AddNode,
    InsertNode,
    DeleteNode,
    DoNothing,
    MutateConstant,
    MutateOperator,
    SwapOperands,
    Randomize,
    Simplify,
}

impl MutationKind {
    /// Same order as [`MutationWeights::as_array`].
    pub const ALL: [MutationKind; 9] = [
        MutationKind::AddNode,
        MutationKind::InsertNode,
        MutationKind::DeleteNode,
        MutationKind::DoNothing,
        MutationKind::MutateConstant,
        MutationKind::MutateOperator,
        MutationKind::SwapOperands,
        MutationKind::Randomize,
        MutationKind::Simplify,
    ];
}

/// Samples mutation kinds in proportion to their weights.
#[derive(Debug, Clone)]
pub struct KindSampler {
    dist: WeightedIndex<f64>,
}

impl KindSampler {
    /// Panics when no weight is positive; configs are validated first.
    pub fn new(weights: &MutationWeights) -> Self {
        Self {
            dist: WeightedIndex::new(weights.as_array()).expect("validated mutation weights"),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MutationKind {
        MutationKind::ALL[self.dist.sample(rng)]
    }
}

/// Everything a variation operator needs besides the expression.
#[derive(Debug, Clone, Copy)]
pub struct VariationContext<'a> {
    pub ops: &'a OperatorSet,
    pub table: &'a ComplexityTable,
    pub nfeatures: usize,
    pub maxsize: u32,
    /// In (0, 1]; scales the constant perturbation.
    pub temperature: f64,
    pub perturbation_factor: f64,
}

impl VariationContext<'_> {
    pub fn fits(&self, e: &Expr) -> bool {
        parsimony(e, self.table) <= self.maxsize
    }
}

/// Outcome of one mutation request.
#[derive(Debug, Clone, PartialEq)]
pub struct Mutation {
    /// Kind actually applied; `DoNothing` after exhausted retries.
    pub kind: MutationKind,
    /// `None` when the kind does not apply (e.g. no constant to perturb).
    pub expr: Option<Expr>,
}

/// Draws a kind and applies it. Oversize results are retried up to
/// [`MAX_ATTEMPTS`] times before falling back to an unchanged copy.
pub fn mutate<R: Rng + ?Sized>(expr: &Expr, sampler: &KindSampler, ctx: &VariationContext<'_>, rng: &mut R) -> Mutation {
    let kind = sampler.sample(rng);
    for _ in 0..MAX_ATTEMPTS {
        match apply_mutation(expr, kind, ctx, rng) {
            None => return Mutation { kind, expr: None },
            Some(e) if ctx.fits(&e) => return Mutation { kind, expr: Some(e) },
            Some(_) => {}
        }
    }
    Mutation {
        kind: MutationKind::DoNothing,
        expr: Some(expr.clone()),
    }
}

/// Applies one mutation kind without any size check.
pub fn apply_mutation<R: Rng + ?Sized>(
    expr: &Expr,
    kind: MutationKind,
    ctx: &VariationContext<'_>,
    rng: &mut R,
) -> Option<Expr> {
    match kind {
        MutationKind::DoNothing => Some(expr.clone()),
        MutationKind::Simplify => Some(simplify(expr)),
        MutationKind::Randomize => {
            let size = (ctx.maxsize as usize).max(1);
            Some(random_expr_with(ctx.ops, ctx.nfeatures, size, rng))
        }
        MutationKind::MutateConstant => mutate_constant(expr, ctx, rng),
        MutationKind::MutateOperator => mutate_operator(expr, ctx.ops, rng),
        MutationKind::SwapOperands => {
            let idx = *expr.indices_where(|e| matches!(e, Expr::Binary(..))).choose(rng)?;
            let Some(Expr::Binary(op, a, b)) = expr.node(idx) else {
                unreachable!("index selects a binary node")
            };
            expr.with_subtree(idx, Expr::Binary(*op, b.clone(), a.clone()))
        }
        MutationKind::AddNode => {
            let idx = *expr.indices_where(Expr::is_leaf).choose(rng)?;
            let node = random_operator_node(ctx, rng, None)?;
            expr.with_subtree(idx, node)
        }
        MutationKind::InsertNode => {
            let idx = rng.random_range(0..expr.size());
            let target = expr.node(idx)?.clone();
            let node = random_operator_node(ctx, rng, Some(target))?;
            expr.with_subtree(idx, node)
        }
        MutationKind::DeleteNode => {
            let idx = *expr.indices_where(|e| !e.is_leaf()).choose(rng)?;
            let node = expr.node(idx)?;
            let child = (*node.children().choose(rng)?).clone();
            expr.with_subtree(idx, child)
        }
    }
}

/// New operator node whose operands are fresh leaves, except that `keep`
/// (when given) becomes one of the operands.
fn random_operator_node<R: Rng + ?Sized>(ctx: &VariationContext<'_>, rng: &mut R, keep: Option<Expr>) -> Option<Expr> {
    let nb = ctx.ops.binary.len();
    let nu = ctx.ops.unary.len();
    if nb + nu == 0 {
        return None;
    }
    let pick = rng.random_range(0..nb + nu);
    let leaf = |rng: &mut R| random_leaf(ctx.nfeatures, rng);
    if pick < nb {
        let op = ctx.ops.binary[pick];
        let a = keep.unwrap_or_else(|| leaf(rng));
        let b = leaf(rng);
        Some(if rng.random_bool(0.5) {
            Expr::binary(op, a, b)
        } else {
            Expr::binary(op, b, a)
        })
    } else {
        let op = ctx.ops.unary[pick - nb];
        Some(Expr::unary(op, keep.unwrap_or_else(|| leaf(rng))))
    }
}

/// Multiplies or divides one constant by `m^u`, `u ~ U(0, 1)`, with
/// `m = perturbation_factor * temperature + 1.1`; rarely flips its sign.
fn mutate_constant<R: Rng + ?Sized>(expr: &Expr, ctx: &VariationContext<'_>, rng: &mut R) -> Option<Expr> {
    let idx = *expr.indices_where(|e| matches!(e, Expr::Constant(_))).choose(rng)?;
    let c = expr.node(idx)?.as_constant()?;
    let max_change = ctx.perturbation_factor * ctx.temperature + 1.1;
    let factor = max_change.powf(rng.random::<f64>());
    let mut v = if rng.random_bool(0.5) { c * factor } else { c / factor };
    if rng.random_bool(NEGATE_PROBABILITY) {
        v = -v;
    }
    expr.with_subtree(idx, Expr::Constant(v))
}

fn mutate_operator<R: Rng + ?Sized>(expr: &Expr, ops: &OperatorSet, rng: &mut R) -> Option<Expr> {
    let idx = *expr.indices_where(|e| !e.is_leaf()).choose(rng)?;
    let replacement = match expr.node(idx)? {
        Expr::Unary(_, a) => Expr::Unary(*ops.unary.choose(rng)?, a.clone()),
        Expr::Binary(_, a, b) => {
            let op: BinaryOp = *ops.binary.choose(rng)?;
            Expr::Binary(op, a.clone(), b.clone())
        }
        _ => unreachable!("index selects an operator node"),
    };
    expr.with_subtree(idx, replacement)
}

/// Exchanges uniformly chosen subtrees of `a` and `b`. Oversize offspring
/// are retried; after [`MAX_ATTEMPTS`] failures the parents are returned.
pub fn crossover<R: Rng + ?Sized>(a: &Expr, b: &Expr, ctx: &VariationContext<'_>, rng: &mut R) -> (Expr, Expr) {
    for _ in 0..MAX_ATTEMPTS {
        let i = rng.random_range(0..a.size());
        let j = rng.random_range(0..b.size());
        let (c1, c2) = crossover_at(a, b, i, j);
        if ctx.fits(&c1) && ctx.fits(&c2) {
            return (c1, c2);
        }
    }
    (a.clone(), b.clone())
}

/// Swaps the subtree at preorder index `i` of `a` with index `j` of `b`.
pub fn crossover_at(a: &Expr, b: &Expr, i: usize, j: usize) -> (Expr, Expr) {
    let sa = a.node(i).expect("index in range").clone();
    let sb = b.node(j).expect("index in range").clone();
    (
        a.with_subtree(i, sb).expect("index in range"),
        b.with_subtree(j, sa).expect("index in range"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{format_expr, parse, random_expr};
    use crate::search::config::SearchConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ctx<'a>(ops: &'a OperatorSet, table: &'a ComplexityTable) -> VariationContext<'a> {
        VariationContext {
            ops,
            table,
            nfeatures: 3,
            maxsize: 20,
            temperature: 1.0,
            perturbation_factor: 0.076,
        }
    }

    fn well_formed(e: &Expr, nfeatures: usize) -> bool {
        let mut ok = true;
        e.visit(&mut |n| {
            if let Expr::Feature(j) = n {
                ok &= *j < nfeatures;
            }
        });
        ok && parse(&format_expr(e, None)).ok().as_ref() == Some(e)
    }

    #[test]
    fn do_nothing_is_identity() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let e = parse("x0 + sin(x1)").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(apply_mutation(&e, MutationKind::DoNothing, &ctx(&ops, &table), &mut rng), Some(e));
    }

    #[test]
    fn constant_perturbation_law() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let e = parse("x0 + 2.0").unwrap();
        let c = ctx(&ops, &table);
        let bound = 0.076 + 1.1;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2_000 {
            let m = apply_mutation(&e, MutationKind::MutateConstant, &c, &mut rng).unwrap();
            let Expr::Binary(BinaryOp::Add, l, r) = &m else { panic!() };
            assert_eq!(**l, Expr::Feature(0));
            let ratio = (r.as_constant().unwrap() / 2.0).abs();
            assert!(ratio >= 1.0 / bound - 1e-12 && ratio <= bound + 1e-12, "{ratio}");
        }
        assert_eq!(apply_mutation(&parse("x0").unwrap(), MutationKind::MutateConstant, &c, &mut rng), None);
    }

    #[test]
    fn kind_frequencies_match_weights() {
        let w = SearchConfig::default().mutation_weights();
        let sampler = KindSampler::new(&w);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut counts = [0usize; 9];
        for _ in 0..n {
            let k = sampler.sample(&mut rng);
            counts[MutationKind::ALL.iter().position(|&x| x == k).unwrap()] += 1;
        }
        let weights = w.as_array();
        let total: f64 = weights.iter().sum();
        for (i, &c) in counts.iter().enumerate() {
            let p = weights[i] / total;
            let sd = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd + 1.0, "kind {i}: {c} vs {}", n as f64 * p);
        }
    }

    #[test]
    fn every_kind_yields_well_formed_results() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let c = ctx(&ops, &table);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let e = random_expr(3, 9, &mut rng);
            for kind in MutationKind::ALL {
                if let Some(m) = apply_mutation(&e, kind, &c, &mut rng) {
                    assert!(well_formed(&m, 3), "{kind:?}: {m}");
                }
            }
        }
    }

    #[test]
    fn structural_kinds_change_size_as_expected() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let c = ctx(&ops, &table);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let e = parse("x0*x1 + 1.5").unwrap();
        for _ in 0..200 {
            let add = apply_mutation(&e, MutationKind::AddNode, &c, &mut rng).unwrap();
            assert!(add.size() == e.size() + 1 || add.size() == e.size() + 2);
            let ins = apply_mutation(&e, MutationKind::InsertNode, &c, &mut rng).unwrap();
            assert!(ins.size() == e.size() + 1 || ins.size() == e.size() + 2);
            let del = apply_mutation(&e, MutationKind::DeleteNode, &c, &mut rng).unwrap();
            assert!(del.size() < e.size());
            let swap = apply_mutation(&e, MutationKind::SwapOperands, &c, &mut rng).unwrap();
            assert_eq!(swap.size(), e.size());
        }
        assert_eq!(apply_mutation(&parse("x0").unwrap(), MutationKind::DeleteNode, &c, &mut rng), None);
    }

    #[test]
    fn results_respect_maxsize() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let mut c = ctx(&ops, &table);
        c.maxsize = 8;
        let sampler = KindSampler::new(&SearchConfig::default().mutation_weights());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = parse("x0*x1 + 1.5").unwrap();
        for _ in 0..2_000 {
            if let Some(m) = mutate(&e, &sampler, &c, &mut rng).expr {
                assert!(parsimony(&m, &table) <= 8, "{m}");
            }
        }
    }

    #[test]
    fn crossover_at_roots_swaps_parents() {
        let a = parse("x0 + 1.0").unwrap();
        let b = parse("sin(x1)").unwrap();
        assert_eq!(crossover_at(&a, &b, 0, 0), (b.clone(), a.clone()));
    }

    #[test]
    fn crossover_pair_enumeration_contains_leaf_swap() {
        let a = parse("x0 + 1.0").unwrap();
        let b = parse("sin(x1)").unwrap();
        let want = (parse("x0 + sin(x1)").unwrap(), parse("1.0").unwrap());
        let found = (0..a.size())
            .flat_map(|i| (0..b.size()).map(move |j| (i, j)))
            .any(|(i, j)| crossover_at(&a, &b, i, j) == want);
        assert!(found);
    }

    #[test]
    fn random_crossovers_stay_well_formed() {
        let (ops, table) = (OperatorSet::default(), ComplexityTable::default());
        let c = ctx(&ops, &table);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10_000 {
            let a = random_expr(3, 10, &mut rng);
            let b = random_expr(3, 10, &mut rng);
            let (x, y) = crossover(&a, &b, &c, &mut rng);
            assert_eq!(x.size() + y.size(), a.size() + b.size());
            assert!(c.fits(&x) || x == a);
            assert!(well_formed(&x, 3) && well_formed(&y, 3));
        }
    }
}
