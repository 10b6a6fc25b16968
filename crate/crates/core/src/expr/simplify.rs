//! Bottom-up algebraic rewriting.
//!
//! Every rule removes at least one node, so parsimony never grows and the
//! rewrite terminates. Values are preserved wherever the original
//! expression is finite.

use super::{BinaryOp, Expr};

pub fn simplify(expr: &Expr) -> Expr {
    match expr {
        Expr::Constant(_) | Expr::Feature(_) => expr.clone(),
        Expr::Unary(op, a) => {
            let a = simplify(a);
            if let Some(c) = a.as_constant() {
                let v = op.apply(c);
                if v.is_finite() {
                    return Expr::Constant(v);
                }
            }
            Expr::unary(*op, a)
        }
        Expr::Binary(op, a, b) => rewrite(*op, simplify(a), simplify(b)),
    }
}

fn is_const(e: &Expr, v: f64) -> bool {
    e.as_constant() == Some(v)
}

/// `x + c` and `x - c` viewed as `(x, ±c)`.
fn affine_offset(e: &Expr) -> Option<(&Expr, f64)> {
    match e {
        Expr::Binary(BinaryOp::Add, x, c) | Expr::Binary(BinaryOp::Add, c, x)
            if c.as_constant().is_some() && x.as_constant().is_none() =>
        {
            Some((x, c.as_constant().unwrap()))
        }
        Expr::Binary(BinaryOp::Sub, x, c) if c.as_constant().is_some() && x.as_constant().is_none() => {
            Some((x, -c.as_constant().unwrap()))
        }
        _ => None,
    }
}

/// `c * x` and `x * c` viewed as `(x, c)`.
fn scaled(e: &Expr) -> Option<(&Expr, f64)> {
    match e {
        Expr::Binary(BinaryOp::Mul, x, c) | Expr::Binary(BinaryOp::Mul, c, x)
            if c.as_constant().is_some() && x.as_constant().is_none() =>
        {
            Some((x, c.as_constant().unwrap()))
        }
        _ => None,
    }
}

fn finite_const(v: f64) -> Option<Expr> {
    v.is_finite().then_some(Expr::Constant(v))
}

/// Rewrites `op(a, b)` where both children are already simplified.
fn rewrite(op: BinaryOp, a: Expr, b: Expr) -> Expr {
    if let (Some(x), Some(y)) = (a.as_constant(), b.as_constant()) {
        if let Some(c) = finite_const(op.apply(x, y)) {
            return c;
        }
        return Expr::binary(op, a, b);
    }
    match op {
        BinaryOp::Add => {
            if is_const(&a, 0.0) {
                return b;
            }
            if is_const(&b, 0.0) {
                return a;
            }
            // (x ± c1) + c2 -> x + (c2 ± c1), either operand order.
            let (inner, outer) = if b.as_constant().is_some() { (&a, &b) } else { (&b, &a) };
            if let (Some((x, c1)), Some(c2)) = (affine_offset(inner), outer.as_constant()) {
                if let Some(c) = finite_const(c1 + c2) {
                    return rewrite(BinaryOp::Add, x.clone(), c);
                }
            }
            // a + (0 - y) -> a - y
            if let Expr::Binary(BinaryOp::Sub, z, y) = &b {
                if is_const(z, 0.0) {
                    return rewrite(BinaryOp::Sub, a, (**y).clone());
                }
            }
        }
        BinaryOp::Sub => {
            if is_const(&b, 0.0) {
                return a;
            }
            if a == b {
                return Expr::Constant(0.0);
            }
            // (x ± c1) - c2 -> x + (c1 - c2)
            if let (Some((x, c1)), Some(c2)) = (affine_offset(&a), b.as_constant()) {
                if let Some(c) = finite_const(c1 - c2) {
                    return rewrite(BinaryOp::Add, x.clone(), c);
                }
            }
            // a - (0 - y) -> a + y
            if let Expr::Binary(BinaryOp::Sub, z, y) = &b {
                if is_const(z, 0.0) {
                    return rewrite(BinaryOp::Add, a, (**y).clone());
                }
            }
        }
        BinaryOp::Mul => {
            if is_const(&a, 0.0) || is_const(&b, 0.0) {
                return Expr::Constant(0.0);
            }
            if is_const(&a, 1.0) {
                return b;
            }
            if is_const(&b, 1.0) {
                return a;
            }
            // (c1 * x) * c2 -> (c1 c2) * x; covers (-1)(-1 x) -> x.
            let (inner, outer) = if b.as_constant().is_some() { (&a, &b) } else { (&b, &a) };
            if let (Some((x, c1)), Some(c2)) = (scaled(inner), outer.as_constant()) {
                if let Some(c) = finite_const(c1 * c2) {
                    return rewrite(BinaryOp::Mul, c, x.clone());
                }
            }
        }
        BinaryOp::Div => {
            if is_const(&b, 1.0) {
                return a;
            }
            if is_const(&a, 0.0) {
                return Expr::Constant(0.0);
            }
            if a == b {
                return Expr::Constant(1.0);
            }
        }
    }
    Expr::binary(op, a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{format_expr, parse, parsimony, ComplexityTable};

    fn simp(src: &str) -> String {
        format_expr(&simplify(&parse(src).unwrap()), None)
    }

    #[test]
    fn identities() {
        assert_eq!(simp("x0 + 0.0"), "x0");
        assert_eq!(simp("0.0 + x0"), "x0");
        assert_eq!(simp("x0 - 0.0"), "x0");
        assert_eq!(simp("x0*1.0"), "x0");
        assert_eq!(simp("1.0*x0"), "x0");
        assert_eq!(simp("x0*0.0"), "0.0");
        assert_eq!(simp("x0/1.0"), "x0");
        assert_eq!(simp("sin(x1) - sin(x1)"), "0.0");
    }

    #[test]
    fn folding() {
        assert_eq!(simp("2.0*3.0"), "6.0");
        assert_eq!(simp("(x0*1.0) + (4.0 - 1.0)"), "x0 + 3.0");
        assert_eq!(simp("x0 + exp(0.0)*2.0"), "x0 + 2.0");
        assert_eq!(simp("(x0 + 1.0) + 2.0"), "x0 + 3.0");
        assert_eq!(simp("2.0 + (x0 - 1.0)"), "x0 + 1.0");
        assert_eq!(simp("(x0 - 1.0) - 2.0"), "x0 + -3.0");
        assert_eq!(simp("-1.0*(-1.0*x0)"), "x0");
        assert_eq!(simp("2.0*(x0*3.0)"), "6.0*x0");
    }

    #[test]
    fn double_negation() {
        assert_eq!(simp("0.0 - (0.0 - x0)"), "x0");
        assert_eq!(simp("x1 - (0.0 - x0)"), "x1 + x0");
    }

    #[test]
    fn non_finite_folds_are_left_alone() {
        assert_eq!(simp("log(-1.0)"), "log(-1.0)");
        assert_eq!(simp("1.0/0.0"), "1.0/0.0");
    }

    #[test]
    fn no_rule_returns_input() {
        let e = parse("sin(x0)*x1 + sqrt(x2)").unwrap();
        assert_eq!(simplify(&e), e);
    }

    #[test]
    fn never_grows() {
        let t = ComplexityTable::default();
        for src in ["(x0 + 1.0) + 2.0", "x0*0.0 + x1", "(x0 - 1.0) - 2.0"] {
            let e = parse(src).unwrap();
            assert!(parsimony(&simplify(&e), &t) <= parsimony(&e, &t));
        }
    }
}
