//! KVI formula language.
//!
//! Grammar (whitespace insignificant):
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := NUMBER | SYMBOL | "-" factor | "(" expr ")" | FUNC "(" expr ("," expr)* ")"
//! FUNC   := "min" | "max" | "clamp"
//! SYMBOL := [A-Za-z_][A-Za-z0-9_]*
//! NUMBER := decimal literal with optional fraction
//! ```

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Min,
    Max,
    Clamp,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Clamp => "clamp",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            Func::Clamp => 3,
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "min" => Some(Func::Min),
            "max" => Some(Func::Max),
            "clamp" => Some(Func::Clamp),
            _ => None,
        }
    }
}

/// Expression tree produced by [`parse_formula`].
#[derive(Debug, Clone, PartialEq)]
pub enum FormulaExpr {
    Number(f64),
    Symbol(String),
    Neg(Box<FormulaExpr>),
    Binary {
        op: BinaryOp,
        lhs: Box<FormulaExpr>,
        rhs: Box<FormulaExpr>,
    },
    Call { func: Func, args: Vec<FormulaExpr> },
}

#[allow(clippy::should_implement_trait)]
impl FormulaExpr {
    pub fn number(v: f64) -> Self {
        FormulaExpr::Number(v)
    }

    pub fn symbol(name: impl Into<String>) -> Self {
        FormulaExpr::Symbol(name.into())
    }

    pub fn binary(op: BinaryOp, lhs: FormulaExpr, rhs: FormulaExpr) -> Self {
        FormulaExpr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn neg(inner: FormulaExpr) -> Self {
        FormulaExpr::Neg(Box::new(inner))
    }

    pub fn call(func: Func, args: Vec<FormulaExpr>) -> Self {
        FormulaExpr::Call { func, args }
    }

    /// Distinct symbol names, sorted.
    pub fn free_symbols(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit_symbols(&mut |s| {
            out.insert(s.to_string());
        });
        out
    }

    /// Number of times each symbol occurs in the tree.
    pub fn symbol_occurrences(&self) -> std::collections::BTreeMap<String, usize> {
        let mut out = std::collections::BTreeMap::new();
        self.visit_symbols(&mut |s| *out.entry(s.to_string()).or_insert(0) += 1);
        out
    }

    fn visit_symbols(&self, f: &mut impl FnMut(&str)) {
        match self {
            FormulaExpr::Number(_) => {}
            FormulaExpr::Symbol(s) => f(s),
            FormulaExpr::Neg(inner) => inner.visit_symbols(f),
            FormulaExpr::Binary { lhs, rhs, .. } => {
                lhs.visit_symbols(f);
                rhs.visit_symbols(f);
            }
            FormulaExpr::Call { args, .. } => args.iter().for_each(|a| a.visit_symbols(f)),
        }
    }

    /// Operator nesting depth; leaves have depth 0.
    pub fn depth(&self) -> usize {
        match self {
            FormulaExpr::Number(_) | FormulaExpr::Symbol(_) => 0,
            FormulaExpr::Neg(inner) => 1 + inner.depth(),
            FormulaExpr::Binary { lhs, rhs, .. } => 1 + lhs.depth().max(rhs.depth()),
            FormulaExpr::Call { args, .. } => 1 + args.iter().map(|a| a.depth()).max().unwrap_or(0),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            FormulaExpr::Number(_) | FormulaExpr::Symbol(_) => 1,
            FormulaExpr::Neg(inner) => 1 + inner.node_count(),
            FormulaExpr::Binary { lhs, rhs, .. } => 1 + lhs.node_count() + rhs.node_count(),
            FormulaExpr::Call { args, .. } => 1 + args.iter().map(|a| a.node_count()).sum::<usize>(),
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, parent: u8) -> fmt::Result {
        match self {
            FormulaExpr::Number(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{})", -v)
                } else {
                    write!(f, "{v}")
                }
            }
            FormulaExpr::Symbol(s) => f.write_str(s),
            FormulaExpr::Neg(inner) => {
                f.write_str("-")?;
                inner.fmt_prec(f, 3)
            }
            FormulaExpr::Binary { op, lhs, rhs } => {
                let prec = op.precedence();
                let wrap = prec < parent;
                if wrap {
                    f.write_str("(")?;
                }
                lhs.fmt_prec(f, prec)?;
                write!(f, " {} ", op.symbol())?;
                // Right operand binds tighter to keep left associativity explicit.
                rhs.fmt_prec(f, prec + 1)?;
                if wrap {
                    f.write_str(")")?;
                }
                Ok(())
            }
            FormulaExpr::Call { func, args } => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    a.fmt_prec(f, 0)?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Display for FormulaExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormulaError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown function `{name}` at byte {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` expects {expected} argument(s), got {found} (byte {offset})")]
    Arity { name: String, expected: usize, found: usize, offset: usize },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
    End,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "end of input".into(),
        }
    }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, usize)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((Tok::Plus, start)),
            b'-' => out.push((Tok::Minus, start)),
            b'*' => out.push((Tok::Star, start)),
            b'/' => out.push((Tok::Slash, start)),
            b'(' => out.push((Tok::LParen, start)),
            b')' => out.push((Tok::RParen, start)),
            b',' => out.push((Tok::Comma, start)),
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    let frac_start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    if i == frac_start {
                        return Err(FormulaError::Syntax {
                            offset: i,
                            message: "expected digits after decimal point".into(),
                        });
                    }
                }
                let text = &src[start..i];
                let value: f64 = text.parse().map_err(|_| FormulaError::Syntax {
                    offset: start,
                    message: format!("invalid number `{text}`"),
                })?;
                out.push((Tok::Num(value), start));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(src[start..i].to_string()), start));
                continue;
            }
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(FormulaError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    out.push((Tok::End, src.len()));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> (Tok, usize) {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected(&self, expected: &str) -> FormulaError {
        FormulaError::Syntax {
            offset: self.offset(),
            message: format!("expected {expected}, found {}", self.peek().describe()),
        }
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), FormulaError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.unexpected(expected))
        }
    }

    fn expr(&mut self) -> Result<FormulaExpr, FormulaError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = FormulaExpr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<FormulaExpr, FormulaError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = FormulaExpr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<FormulaExpr, FormulaError> {
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(FormulaExpr::Number(v))
            }
            Tok::Minus => {
                self.bump();
                Ok(FormulaExpr::neg(self.factor()?))
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let (_, at) = self.bump();
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name)
                        .ok_or(FormulaError::UnknownFunction { name: name.clone(), offset: at })?;
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`,` or `)`")?;
                    if args.len() != func.arity() {
                        return Err(FormulaError::Arity {
                            name,
                            expected: func.arity(),
                            found: args.len(),
                            offset: at,
                        });
                    }
                    Ok(FormulaExpr::call(func, args))
                } else if Func::from_name(&name).is_some() {
                    Err(FormulaError::Syntax {
                        offset: self.offset(),
                        message: format!("expected `(` after function `{name}`"),
                    })
                } else {
                    Ok(FormulaExpr::Symbol(name))
                }
            }
            _ => Err(self.unexpected("a number, symbol, `-`, `(` or function call")),
        }
    }
}

pub fn parse_formula(source: &str) -> Result<FormulaExpr, FormulaError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, pos: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(p.unexpected("an operator or end of input"));
    }
    Ok(e)
}
