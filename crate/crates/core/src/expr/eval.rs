//! Batch evaluation over the rows of a feature matrix.
//!
//! Every intermediate result that is not finite is replaced by NaN, which
//! then propagates through all later operations. A row whose output is NaN
//! therefore had a domain violation or overflow somewhere in its evaluation.

use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: Vec<f64>,
    /// Number of rows whose output is not finite.
    pub non_finite: usize,
}

impl Evaluation {
    pub fn all_finite(&self) -> bool {
        self.non_finite == 0
    }
}

/// Reusable column buffers, so repeated evaluations do not allocate.
#[derive(Debug, Default)]
pub struct EvalScratch {
    pool: Vec<Vec<f64>>,
}

impl EvalScratch {
    pub fn new() -> Self {
        Self::default()
    }

    fn take(&mut self, n: usize) -> Vec<f64> {
        let mut v = self.pool.pop().unwrap_or_default();
        v.clear();
        v.reserve(n);
        v
    }

    pub fn give(&mut self, v: Vec<f64>) {
        self.pool.push(v);
    }

    /// Evaluates `expr`, returning `None` as soon as any intermediate value
    /// is not finite. This is the hot path of fitness evaluation.
    pub fn eval_finite(&mut self, expr: &Expr, x: &Matrix) -> Option<Vec<f64>> {
        self.eval_node(expr, x, true)
    }

    /// Evaluates `expr` on every row; non-finite rows come back as NaN.
    pub fn eval_all(&mut self, expr: &Expr, x: &Matrix) -> Vec<f64> {
        self.eval_node(expr, x, false)
            .expect("non-aborting evaluation always returns")
    }

    fn eval_node(&mut self, expr: &Expr, x: &Matrix, abort: bool) -> Option<Vec<f64>> {
        let n = x.nrows();
        match expr {
            Expr::Constant(c) => {
                let mut buf = self.take(n);
                let c = if c.is_finite() { *c } else { f64::NAN };
                if abort && c.is_nan() {
                    self.give(buf);
                    return None;
                }
                buf.resize(n, c);
                Some(buf)
            }
            Expr::Feature(j) => {
                let mut buf = self.take(n);
                buf.extend(x.column(*j).iter().map(|&v| if v.is_finite() { v } else { f64::NAN }));
                if abort && buf.iter().any(|v| v.is_nan()) {
                    self.give(buf);
                    return None;
                }
                Some(buf)
            }
            Expr::Unary(op, a) => {
                let mut buf = self.eval_node(a, x, abort)?;
                let ok = apply_unary(*op, &mut buf);
                if abort && !ok {
                    self.give(buf);
                    return None;
                }
                Some(buf)
            }
            Expr::Binary(op, a, b) => {
                let mut left = self.eval_node(a, x, abort)?;
                let right = match self.eval_node(b, x, abort) {
                    Some(r) => r,
                    None => {
                        self.give(left);
                        return None;
                    }
                };
                let ok = apply_binary(*op, &mut left, &right);
                self.give(right);
                if abort && !ok {
                    self.give(left);
                    return None;
                }
                Some(left)
            }
        }
    }
}

#[inline(always)]
fn clean(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NAN
    }
}

// Each arm keeps the operator outside the loop so the body vectorizes.
fn apply_unary(op: UnaryOp, buf: &mut [f64]) -> bool {
    macro_rules! map {
        ($f:expr) => {{
            let mut ok = true;
            for v in buf.iter_mut() {
                let r = clean($f(*v));
                ok &= !r.is_nan();
                *v = r;
            }
            ok
        }};
    }
    match op {
        UnaryOp::Square => map!(|a: f64| a * a),
        UnaryOp::Sin => map!(f64::sin),
        UnaryOp::Cos => map!(f64::cos),
        UnaryOp::Exp => map!(f64::exp),
        UnaryOp::Log => map!(f64::ln),
        UnaryOp::Sqrt => map!(f64::sqrt),
    }
}

fn apply_binary(op: BinaryOp, left: &mut [f64], right: &[f64]) -> bool {
    macro_rules! zip {
        ($f:expr) => {{
            let mut ok = true;
            for (l, &r) in left.iter_mut().zip(right) {
                let v = clean($f(*l, r));
                ok &= !v.is_nan();
                *l = v;
            }
            ok
        }};
    }
    match op {
        BinaryOp::Add => zip!(|a: f64, b: f64| a + b),
        BinaryOp::Sub => zip!(|a: f64, b: f64| a - b),
        BinaryOp::Mul => zip!(|a: f64, b: f64| a * b),
        BinaryOp::Div => zip!(|a: f64, b: f64| a / b),
    }
}

/// Evaluates `expr` on every row of `x`.
pub fn evaluate(expr: &Expr, x: &Matrix) -> Result<Evaluation> {
    if x.nrows() == 0 {
        return Err(Error::EmptyInput("feature matrix has no rows".into()));
    }
    if let Some(max) = expr.max_feature() {
        if max >= x.ncols() {
            return Err(Error::Arity {
                index: max,
                ncols: x.ncols(),
            });
        }
    }
    let values = EvalScratch::new().eval_all(expr, x);
    let non_finite = values.iter().filter(|v| !v.is_finite()).count();
    Ok(Evaluation { values, non_finite })
}
