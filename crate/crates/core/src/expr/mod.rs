//! Expression trees over a fixed operator library.
//!
//! An [`Expr`] is an owned tree of operator, feature and constant nodes.
//! Trees are immutable in practice: every transformation in the crate
//! (mutation, simplification, constant refitting) builds a new tree.

mod complexity;
mod eval;
mod parse;
mod random;
mod simplify;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use complexity::{parsimony, ComplexityTable};
pub use eval::{evaluate, EvalScratch, Evaluation};
pub use parse::{format_expr, parse, parse_with_names, FeatureNames};
pub use random::{random_expr, random_expr_with, random_leaf, OperatorSet};
pub use simplify::simplify;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryOp {
    Square,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }

    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    /// Accepts both the operator name and its infix symbol.
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "add" | "+" => Some(BinaryOp::Add),
            "sub" | "-" => Some(BinaryOp::Sub),
            "mul" | "*" => Some(BinaryOp::Mul),
            "div" | "/" => Some(BinaryOp::Div),
            _ => None,
        }
    }

    #[inline]
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 6] = [
        UnaryOp::Square,
        UnaryOp::Sin,
        UnaryOp::Cos,
        UnaryOp::Exp,
        UnaryOp::Log,
        UnaryOp::Sqrt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Square => "square",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        UnaryOp::ALL.into_iter().find(|op| op.name() == s)
    }

    /// Raw IEEE result; out-of-domain inputs give NaN or an infinity.
    #[inline]
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Square => a * a,
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sqrt => a.sqrt(),
        }
    }
}

/// A single node of an expression viewed in isolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Token {
    Binary(BinaryOp),
    Unary(UnaryOp),
    Feature(usize),
    Constant(f64),
}

impl Token {
    pub fn arity(self) -> usize {
        match self {
            Token::Binary(_) => 2,
            Token::Unary(_) => 1,
            Token::Feature(_) | Token::Constant(_) => 0,
        }
    }
}

/// Expression tree. Arity is carried by the variant, so a malformed tree
/// cannot be constructed.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Constant(f64),
    Feature(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn constant(v: f64) -> Self {
        Expr::Constant(v)
    }

    pub fn feature(i: usize) -> Self {
        Expr::Feature(i)
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Self {
        Expr::Unary(op, Box::new(a))
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Self {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn token(&self) -> Token {
        match self {
            Expr::Constant(v) => Token::Constant(*v),
            Expr::Feature(i) => Token::Feature(*i),
            Expr::Unary(op, _) => Token::Unary(*op),
            Expr::Binary(op, _, _) => Token::Binary(*op),
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Constant(_) | Expr::Feature(_) => vec![],
            Expr::Unary(_, a) => vec![a],
            Expr::Binary(_, a, b) => vec![a, b],
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, Expr::Constant(_) | Expr::Feature(_))
    }

    pub fn as_constant(&self) -> Option<f64> {
        match self {
            Expr::Constant(v) => Some(*v),
            _ => None,
        }
    }

    /// Total node count.
    pub fn size(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Feature(_) => 1,
            Expr::Unary(_, a) => 1 + a.size(),
            Expr::Binary(_, a, b) => 1 + a.size() + b.size(),
        }
    }

    /// Longest root-to-leaf path, counted in nodes (a leaf has depth 1).
    pub fn depth(&self) -> usize {
        match self {
            Expr::Constant(_) | Expr::Feature(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    /// Tokens in preorder.
    pub fn tokens(&self) -> Vec<Token> {
        let mut out = Vec::with_capacity(self.size());
        self.visit(&mut |e| out.push(e.token()));
        out
    }

    /// Preorder traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Constant(_) | Expr::Feature(_) => {}
            Expr::Unary(_, a) => a.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
        }
    }

    /// Subtree at a preorder index.
    pub fn node(&self, index: usize) -> Option<&Expr> {
        let mut remaining = index;
        let mut cur = self;
        loop {
            if remaining == 0 {
                return Some(cur);
            }
            remaining -= 1;
            match cur {
                Expr::Constant(_) | Expr::Feature(_) => return None,
                Expr::Unary(_, a) => cur = a,
                Expr::Binary(_, a, b) => {
                    let left = a.size();
                    if remaining < left {
                        cur = a;
                    } else {
                        remaining -= left;
                        cur = b;
                    }
                }
            }
        }
    }

    pub fn node_mut(&mut self, index: usize) -> Option<&mut Expr> {
        let mut remaining = index;
        let mut cur = self;
        loop {
            if remaining == 0 {
                return Some(cur);
            }
            remaining -= 1;
            match cur {
                Expr::Constant(_) | Expr::Feature(_) => return None,
                Expr::Unary(_, a) => cur = a,
                Expr::Binary(_, a, b) => {
                    let left = a.size();
                    if remaining < left {
                        cur = a;
                    } else {
                        remaining -= left;
                        cur = b;
                    }
                }
            }
        }
    }

    /// Copy of `self` with the subtree at `index` replaced.
    pub fn with_subtree(&self, index: usize, replacement: Expr) -> Option<Expr> {
        let mut out = self.clone();
        *out.node_mut(index)? = replacement;
        Some(out)
    }

    /// Preorder indices of nodes matching `pred`.
    pub fn indices_where(&self, pred: impl Fn(&Expr) -> bool) -> Vec<usize> {
        let mut out = Vec::new();
        let mut i = 0;
        self.visit(&mut |e| {
            if pred(e) {
                out.push(i);
            }
            i += 1;
        });
        out
    }

    /// Constant values in left-to-right (preorder) order.
    pub fn constants(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Constant(v) = e {
                out.push(*v);
            }
        });
        out
    }

    pub fn constant_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |e| n += usize::from(matches!(e, Expr::Constant(_))));
        n
    }

    /// Copy with constants overwritten in preorder. Panics if `values` is
    /// shorter than [`Expr::constant_count`].
    pub fn with_constants(&self, values: &[f64]) -> Expr {
        let mut out = self.clone();
        let mut it = values.iter();
        out.set_constants(&mut it);
        out
    }

    fn set_constants<'a>(&mut self, it: &mut impl Iterator<Item = &'a f64>) {
        match self {
            Expr::Constant(v) => *v = *it.next().expect("too few constants"),
            Expr::Feature(_) => {}
            Expr::Unary(_, a) => a.set_constants(it),
            Expr::Binary(_, a, b) => {
                a.set_constants(it);
                b.set_constants(it);
            }
        }
    }

    /// Largest feature index referenced, if any.
    pub fn max_feature(&self) -> Option<usize> {
        let mut best = None;
        self.visit(&mut |e| {
            if let Expr::Feature(i) = e {
                best = Some(best.map_or(*i, |b: usize| b.max(*i)));
            }
        });
        best
    }

    /// Scalar evaluation of a single row. Non-finite intermediates give NaN.
    pub fn eval_row(&self, row: &[f64]) -> f64 {
        let v = match self {
            Expr::Constant(v) => *v,
            Expr::Feature(i) => row[*i],
            Expr::Unary(op, a) => op.apply(a.eval_row(row)),
            Expr::Binary(op, a, b) => op.apply(a.eval_row(row), b.eval_row(row)),
        };
        if v.is_finite() {
            v
        } else {
            f64::NAN
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_expr(self, None))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Expr {
        // (x0 + 2) * sin(x1)
        Expr::binary(
            BinaryOp::Mul,
            Expr::binary(BinaryOp::Add, Expr::feature(0), Expr::constant(2.0)),
            Expr::unary(UnaryOp::Sin, Expr::feature(1)),
        )
    }

    #[test]
    fn size_depth_tokens() {
        let e = sample();
        assert_eq!(e.size(), 6);
        assert_eq!(e.depth(), 3);
        assert_eq!(
            e.tokens(),
            vec![
                Token::Binary(BinaryOp::Mul),
                Token::Binary(BinaryOp::Add),
                Token::Feature(0),
                Token::Constant(2.0),
                Token::Unary(UnaryOp::Sin),
                Token::Feature(1),
            ]
        );
    }

    #[test]
    fn preorder_node_access() {
        let e = sample();
        for (i, t) in e.tokens().into_iter().enumerate() {
            assert_eq!(e.node(i).unwrap().token(), t);
        }
        assert!(e.node(6).is_none());
        let r = e.with_subtree(4, Expr::constant(1.0)).unwrap();
        assert_eq!(r.size(), 5);
        assert_eq!(r.node(4), Some(&Expr::constant(1.0)));
    }

    #[test]
    fn constants_round_trip() {
        let e = Expr::binary(BinaryOp::Add, Expr::constant(1.0), Expr::constant(2.0));
        assert_eq!(e.constants(), vec![1.0, 2.0]);
        let f = e.with_constants(&[5.0, 6.0]);
        assert_eq!(f.constants(), vec![5.0, 6.0]);
        assert_eq!(f.constant_count(), 2);
    }

    #[test]
    fn op_names_round_trip() {
        for op in UnaryOp::ALL {
            assert_eq!(UnaryOp::from_name(op.name()), Some(op));
        }
        for op in BinaryOp::ALL {
            assert_eq!(BinaryOp::from_name(op.name()), Some(op));
            assert_eq!(BinaryOp::from_name(&op.symbol().to_string()), Some(op));
        }
    }
}
