use serde::{Deserialize, Serialize};

use super::{BinaryOp, Expr, Token, UnaryOp};

/// Integer weight per token class. The sum over an expression's tokens is
/// its parsimony.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComplexityTable {
    pub add: u32,
    pub sub: u32,
    pub mul: u32,
    pub div: u32,
    pub square: u32,
    pub sin: u32,
    pub cos: u32,
    pub exp: u32,
    pub log: u32,
    pub sqrt: u32,
    pub feature: u32,
    pub constant: u32,
}

impl Default for ComplexityTable {
    fn default() -> Self {
        Self {
            add: 1,
            sub: 1,
            mul: 1,
            div: 2,
            square: 2,
            sin: 3,
            cos: 3,
            exp: 4,
            log: 4,
            sqrt: 4,
            feature: 1,
            constant: 1,
        }
    }
}

impl ComplexityTable {
    pub fn weight(&self, token: Token) -> u32 {
        match token {
            Token::Binary(op) => match op {
                BinaryOp::Add => self.add,
                BinaryOp::Sub => self.sub,
                BinaryOp::Mul => self.mul,
                BinaryOp::Div => self.div,
            },
            Token::Unary(op) => match op {
                UnaryOp::Square => self.square,
                UnaryOp::Sin => self.sin,
                UnaryOp::Cos => self.cos,
                UnaryOp::Exp => self.exp,
                UnaryOp::Log => self.log,
                UnaryOp::Sqrt => self.sqrt,
            },
            Token::Feature(_) => self.feature,
            Token::Constant(_) => self.constant,
        }
    }

    /// Smallest weight of any token; bounds node count by parsimony.
    pub fn min_weight(&self) -> u32 {
        [
            self.add,
            self.sub,
            self.mul,
            self.div,
            self.square,
            self.sin,
            self.cos,
            self.exp,
            self.log,
            self.sqrt,
            self.feature,
            self.constant,
        ]
        .into_iter()
        .min()
        .unwrap_or(1)
    }
}

/// Sum of per-token weights.
pub fn parsimony(expr: &Expr, table: &ComplexityTable) -> u32 {
    let mut total = 0;
    expr.visit(&mut |e| total += table.weight(e.token()));
    total
}
