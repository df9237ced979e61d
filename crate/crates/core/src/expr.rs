//! Closed-form scalar expressions used for metric coefficients and test symbols.
//!
//! Expressions are parsed once into a small tree and evaluated generically over
//! any [`Scalar`], so the same tree yields values (`f64`) and exact first
//! derivatives (`Dual64`).

use std::fmt;

use crate::Scalar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("column {column}: {message}")]
pub struct ParseError {
    /// 1-based column in the source string.
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Ln,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "sqrt" => Some(Func::Sqrt),
            "ln" | "log" => Some(Func::Ln),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
            Func::Ln => "ln",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    PowI(Box<Node>, i32),
    PowF(Box<Node>, f64),
    Call(Func, Box<Node>),
}

/// A parsed expression over a fixed, ordered set of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    /// Parses `source`, resolving identifiers against `vars` (position = index
    /// into the slice passed to [`Expr::eval`]).
    pub fn parse(source: &str, vars: &[&str]) -> Result<Self, ParseError> {
        let tokens = lex(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            vars,
            len: source.len(),
        };
        let root = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError {
                column: tok.column,
                message: format!("unexpected {}", tok.kind),
            });
        }
        Ok(Self {
            source: source.trim().to_string(),
            root: fold(root),
        })
    }

    pub fn constant(value: f64) -> Self {
        Self {
            source: format_number(value),
            root: Node::Const(value),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// `Some(c)` when the expression folded to a constant.
    pub fn as_constant(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Whether the tree structurally equals `other` (ignoring source text).
    pub fn same_tree(&self, other: &Expr) -> bool {
        self.root == other.root
    }

    pub fn eval<S: Scalar>(&self, vars: &[S]) -> S {
        eval_node(&self.root, vars)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

fn format_number(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v:e}")
    }
}

fn eval_node<S: Scalar>(node: &Node, vars: &[S]) -> S {
    match node {
        Node::Const(c) => S::from(*c),
        Node::Var(i) => vars[*i],
        Node::Neg(a) => -eval_node(a, vars),
        Node::Add(a, b) => eval_node(a, vars) + eval_node(b, vars),
        Node::Sub(a, b) => eval_node(a, vars) - eval_node(b, vars),
        Node::Mul(a, b) => eval_node(a, vars) * eval_node(b, vars),
        Node::Div(a, b) => eval_node(a, vars) / eval_node(b, vars),
        Node::PowI(a, n) => eval_node(a, vars).powi(*n),
        Node::PowF(a, p) => eval_node(a, vars).powf(*p),
        Node::Call(func, a) => {
            let v = eval_node(a, vars);
            match func {
                Func::Sin => v.sin(),
                Func::Cos => v.cos(),
                Func::Exp => v.exp(),
                Func::Sqrt => v.sqrt(),
                Func::Ln => v.ln(),
            }
        }
    }
}

/// Constant folding; keeps `Var`-free subtrees as a single `Const`.
fn fold(node: Node) -> Node {
    use Node::*;
    let bin = |a: Node, b: Node, mk: fn(Box<Node>, Box<Node>) -> Node, op: fn(f64, f64) -> f64| {
        let (a, b) = (fold(a), fold(b));
        match (&a, &b) {
            (Const(x), Const(y)) => Const(op(*x, *y)),
            _ => mk(Box::new(a), Box::new(b)),
        }
    };
    match node {
        Const(_) | Var(_) => node,
        Neg(a) => match fold(*a) {
            Const(x) => Const(-x),
            a => Neg(Box::new(a)),
        },
        Add(a, b) => bin(*a, *b, Add, |x, y| x + y),
        Sub(a, b) => bin(*a, *b, Sub, |x, y| x - y),
        Mul(a, b) => bin(*a, *b, Mul, |x, y| x * y),
        Div(a, b) => bin(*a, *b, Div, |x, y| x / y),
        PowI(a, n) => match fold(*a) {
            Const(x) => Const(x.powi(n)),
            a => PowI(Box::new(a), n),
        },
        PowF(a, p) => match fold(*a) {
            Const(x) => Const(x.powf(p)),
            a => PowF(Box::new(a), p),
        },
        Call(func, a) => match fold(*a) {
            Const(x) => Const(match func {
                Func::Sin => x.sin(),
                Func::Cos => x.cos(),
                Func::Exp => x.exp(),
                Func::Sqrt => x.sqrt(),
                Func::Ln => x.ln(),
            }),
            a => Call(func, Box::new(a)),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Ident(s) => write!(f, "identifier '{s}'"),
            TokKind::Op(c) => write!(f, "'{c}'"),
            TokKind::LParen => f.write_str("'('"),
            TokKind::RParen => f.write_str("')'"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let column = i + 1;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] as char).is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && (bytes[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v: f64 = text.parse().map_err(|_| ParseError {
                column,
                message: format!("malformed number '{text}'"),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                column,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && ((bytes[i] as char).is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                column,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => {
                    return Err(ParseError {
                        column,
                        message: format!("unexpected character '{c}'"),
                    })
                }
            };
            out.push(Token { kind, column });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vars: &'a [&'a str],
    len: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eof_error(&self, what: &str) -> ParseError {
        ParseError {
            column: self.len + 1,
            message: format!("unexpected end of input, expected {what}"),
        }
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            lhs = if op == '+' {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat_op(&['-']).is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op(&['+']).is_some() {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_some() {
            let column = self.peek().map(|t| t.column).unwrap_or(self.len + 1);
            let exponent = fold(self.unary()?);
            return match exponent {
                Node::Const(p) if p == p.trunc() && p.abs() <= i32::MAX as f64 => {
                    Ok(Node::PowI(Box::new(base), p as i32))
                }
                Node::Const(p) => Ok(Node::PowF(Box::new(base), p)),
                _ => Err(ParseError {
                    column,
                    message: "exponent must be a constant".into(),
                }),
            };
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let tok = self.peek().cloned().ok_or_else(|| self.eof_error("a value"))?;
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let inner = self.expr()?;
                self.close_paren()?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if let Some(func) = Func::from_name(&name) {
                    match self.peek() {
                        Some(Token {
                            kind: TokKind::LParen,
                            ..
                        }) => self.pos += 1,
                        _ => {
                            return Err(ParseError {
                                column: tok.column,
                                message: format!("'{}' must be followed by '('", func.name()),
                            })
                        }
                    }
                    let arg = self.expr()?;
                    self.close_paren()?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Node::Const(std::f64::consts::PI));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(ParseError {
                        column: tok.column,
                        message: format!("unknown variable '{name}' (allowed: {})", self.vars.join(", ")),
                    }),
                }
            }
            other => Err(ParseError {
                column: tok.column,
                message: format!("unexpected {other}"),
            }),
        }
    }

    fn close_paren(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            Some(Token {
                kind: TokKind::RParen,
                ..
            }) => {
                self.pos += 1;
                Ok(())
            }
            Some(t) => Err(ParseError {
                column: t.column,
                message: format!("expected ')', found {}", t.kind),
            }),
            None => Err(self.eof_error("')'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_dual::Dual64;

    fn eval1(src: &str, x: f64) -> f64 {
        Expr::parse(src, &["x1"]).unwrap().eval(&[x])
    }

    #[test]
    fn precedence_and_power() {
        assert_eq!(eval1("1 + 2*3", 0.0), 7.0);
        assert_eq!(eval1("-x1^2", 3.0), -9.0);
        assert_eq!(eval1("2^3^2", 0.0), 512.0);
        assert_eq!(eval1("(1 + x1)^2", 0.5), 2.25);
        assert!((eval1("x1^0.5", 4.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn functions_and_constants() {
        assert!((eval1("sin(pi/2) + cos(0) + exp(0) + sqrt(4)", 0.0) - 5.0).abs() < 1e-15);
        assert_eq!(Expr::parse("2*3 + 1", &[]).unwrap().as_constant(), Some(7.0));
        assert_eq!(Expr::parse("1e-3", &[]).unwrap().as_constant(), Some(1e-3));
    }

    #[test]
    fn dual_derivative_is_exact() {
        let e = Expr::parse("1/(1 - x1)^2 + sin(x1)", &["x1"]).unwrap();
        let x = 0.3;
        let d = e.eval(&[Dual64::from_re(x).derivative()]);
        let expected = 2.0 / (1.0 - x).powi(3) + x.cos();
        assert!((d.eps - expected).abs() < 1e-13);
    }

    #[test]
    fn errors_carry_columns() {
        let err = Expr::parse("1 + q", &["x1"]).unwrap_err();
        assert_eq!(err.column, 5);
        let err = Expr::parse("(1 + x1", &["x1"]).unwrap_err();
        assert_eq!(err.column, 8);
        let err = Expr::parse("1 $ 2", &[]).unwrap_err();
        assert_eq!(err.column, 3);
        assert!(Expr::parse("x1^x1", &["x1"]).is_err());
        assert!(Expr::parse("sin x1", &["x1"]).is_err());
    }
}
