//! Infix text form of expressions.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := power (('*' | '/') power)*
//! power   := primary ('^' '2')*
//! primary := number | '-' number | name '(' expr ')' | name | '(' expr ')'
//! ```
//!
//! Features are written `x<k>` or by a mapped column name. Functions are
//! `sin cos exp log sqrt square`; `a^2` is shorthand for `square(a)`.
//! A leading minus is only accepted directly in front of a numeric literal.

use std::collections::HashMap;

use super::{BinaryOp, Expr, UnaryOp};
use crate::error::{Error, Result};

/// Bidirectional map between column names and feature indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureNames {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureNames {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        let names: Vec<String> = names.iter().map(|s| s.as_ref().to_string()).collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self { names, index }
    }

    pub fn lookup(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// True when every name can be written and read back unambiguously.
    pub fn printable(&self) -> bool {
        self.names.iter().enumerate().all(|(i, n)| {
            is_identifier(n)
                && UnaryOp::from_name(n).is_none()
                && self.index.get(n) == Some(&i)
                && parse_x_index(n).is_none_or(|k| k == i)
        })
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_x_index(s: &str) -> Option<usize> {
    let digits = s.strip_prefix('x')?;
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn parse(text: &str) -> Result<Expr> {
    Parser::new(text, None).parse_all()
}

pub fn parse_with_names(text: &str, names: &FeatureNames) -> Result<Expr> {
    Parser::new(text, Some(names)).parse_all()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Sym(char),
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    names: Option<&'a FeatureNames>,
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, names: Option<&'a FeatureNames>) -> Self {
        Self {
            toks: Vec::new(),
            pos: 0,
            end: src.len(),
            names,
            src,
        }
    }

    fn lex(&mut self) -> Result<()> {
        let bytes = self.src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &self.src[start..i];
                let v: f64 = text.parse().map_err(|_| Error::Syntax {
                    pos: start,
                    msg: format!("malformed number `{text}`"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Syntax {
                        pos: start,
                        msg: format!("number `{text}` is not finite"),
                    });
                }
                self.toks.push((start, Tok::Num(v)));
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                self.toks.push((start, Tok::Ident(self.src[start..i].to_string())));
            } else if b"+-*/^()".contains(&c) {
                self.toks.push((i, Tok::Sym(c as char)));
                i += 1;
            } else {
                let ch = self.src[i..].chars().next().unwrap_or('?');
                return Err(Error::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{ch}`"),
                });
            }
        }
        Ok(())
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(p, _)| *p)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect_sym(&mut self, s: char) -> Result<()> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Sym(c)) if c == s => Ok(()),
            Some(t) => Err(Error::Syntax {
                pos,
                msg: format!("expected `{s}`, found {}", describe(&t)),
            }),
            None => Err(Error::Syntax {
                pos,
                msg: format!("expected `{s}`, found end of input"),
            }),
        }
    }

    fn parse_all(mut self) -> Result<Expr> {
        self.lex()?;
        if self.toks.is_empty() {
            return Err(Error::Syntax {
                pos: 0,
                msg: "empty expression".into(),
            });
        }
        let e = self.expr()?;
        if let Some(t) = self.peek().cloned() {
            return Err(Error::Syntax {
                pos: self.here(),
                msg: format!("unexpected {}", describe(&t)),
            });
        }
        Ok(e)
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Tok::Sym(c @ ('+' | '-'))) = self.peek().cloned() {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.power()?;
        while let Some(Tok::Sym(c @ ('*' | '/'))) = self.peek().cloned() {
            self.bump();
            let rhs = self.power()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn power(&mut self) -> Result<Expr> {
        let mut base = self.primary()?;
        while let Some(Tok::Sym('^')) = self.peek() {
            self.bump();
            let pos = self.here();
            match self.bump() {
                Some(Tok::Num(v)) if v == 2.0 => base = Expr::unary(UnaryOp::Square, base),
                Some(Tok::Num(v)) => return Err(Error::UnknownOperator(format!("^{v}"))),
                Some(t) => {
                    return Err(Error::Syntax {
                        pos,
                        msg: format!("expected exponent 2, found {}", describe(&t)),
                    })
                }
                None => {
                    return Err(Error::Syntax {
                        pos,
                        msg: "expected exponent 2, found end of input".into(),
                    })
                }
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::constant(v)),
            Some(Tok::Sym('-')) => match self.bump() {
                Some(Tok::Num(v)) => Ok(Expr::constant(-v)),
                _ => Err(Error::Syntax {
                    pos,
                    msg: "unary minus is only allowed before a numeric literal".into(),
                }),
            },
            Some(Tok::Sym('(')) => {
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                if let Some(Tok::Sym('(')) = self.peek() {
                    let op = UnaryOp::from_name(&name).ok_or_else(|| Error::UnknownOperator(name.clone()))?;
                    self.bump();
                    let arg = self.expr()?;
                    self.expect_sym(')')?;
                    Ok(Expr::unary(op, arg))
                } else if let Some(i) = self.names.and_then(|n| n.lookup(&name)) {
                    Ok(Expr::feature(i))
                } else if let Some(i) = parse_x_index(&name) {
                    Ok(Expr::feature(i))
                } else {
                    Err(Error::UnknownFeature(name))
                }
            }
            Some(t) => Err(Error::Syntax {
                pos,
                msg: format!("unexpected {}", describe(&t)),
            }),
            None => Err(Error::Syntax {
                pos,
                msg: "unexpected end of input".into(),
            }),
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Sym(c) => format!("`{c}`"),
    }
}

const PREC_ADD: u8 = 1;
const PREC_MUL: u8 = 2;
const PREC_ATOM: u8 = 4;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => PREC_ADD,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => PREC_MUL,
        _ => PREC_ATOM,
    }
}

fn fmt_number(v: f64) -> String {
    // Debug formatting is the shortest representation that reads back to the
    // same bits, and always carries a decimal point or exponent.
    format!("{v:?}")
}

/// Canonical infix text. Uses column names when `names` is given and every
/// name is printable, `x<k>` otherwise.
pub fn format_expr(expr: &Expr, names: Option<&FeatureNames>) -> String {
    let names = names.filter(|n| n.printable());
    let mut out = String::new();
    write_expr(expr, names, &mut out);
    out
}

fn write_expr(e: &Expr, names: Option<&FeatureNames>, out: &mut String) {
    match e {
        Expr::Constant(v) => out.push_str(&fmt_number(*v)),
        Expr::Feature(i) => match names.and_then(|n| n.name(*i)) {
            Some(name) => out.push_str(name),
            None => {
                out.push('x');
                out.push_str(&i.to_string());
            }
        },
        Expr::Unary(UnaryOp::Square, a) if is_plain_atom(a) => {
            write_expr(a, names, out);
            out.push_str("^2");
        }
        Expr::Unary(op, a) => {
            out.push_str(op.name());
            out.push('(');
            write_expr(a, names, out);
            out.push(')');
        }
        Expr::Binary(op, a, b) => {
            let p = precedence(e);
            let wrap_left = precedence(a) < p;
            let wrap_right = precedence(b) <= p;
            wrapped(a, wrap_left, names, out);
            match op {
                BinaryOp::Add => out.push_str(" + "),
                BinaryOp::Sub => out.push_str(" - "),
                BinaryOp::Mul => out.push('*'),
                BinaryOp::Div => out.push('/'),
            }
            wrapped(b, wrap_right, names, out);
        }
    }
}

fn is_plain_atom(e: &Expr) -> bool {
    match e {
        Expr::Feature(_) => true,
        Expr::Constant(v) => v.is_sign_positive(),
        _ => false,
    }
}

fn wrapped(e: &Expr, wrap: bool, names: Option<&FeatureNames>, out: &mut String) {
    if wrap {
        out.push('(');
        write_expr(e, names, out);
        out.push(')');
    } else {
        write_expr(e, names, out);
    }
}
