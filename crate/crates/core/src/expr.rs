//! A small, total expression language for coefficients and payoffs.
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := number | var | func '(' expr (',' expr)* ')' | '(' expr ')'
//! var     := t | x | b | qv
//! func    := sin | cos | exp | tanh | abs | sqrt | min | max
//! ```
//!
//! Unary minus binds tighter than `*` and `/`, so `-2*x` is `(-2)*x`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },

    #[error("unknown identifier `{name}` at line {line}, column {column}")]
    UnknownIdentifier { name: String, line: usize, column: usize },

    #[error("`{name}` takes {expected} argument(s), got {found} (line {line}, column {column})")]
    Arity { name: String, expected: usize, found: usize, line: usize, column: usize },

    #[error("division by zero")]
    DivisionByZero,

    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
}

impl ExprError {
    pub fn is_parse_error(&self) -> bool {
        matches!(self, ExprError::Syntax { .. } | ExprError::UnknownIdentifier { .. } | ExprError::Arity { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X,
    B,
    Qv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Tanh,
    Abs,
    Sqrt,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values of the free variables.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Vars {
    pub t: f64,
    pub x: f64,
    pub b: f64,
    pub qv: f64,
}

impl Expr {
    pub fn eval(&self, v: &Vars) -> Result<f64, ExprError> {
        Ok(match self {
            Expr::Num(c) => *c,
            Expr::Var(Var::T) => v.t,
            Expr::Var(Var::X) => v.x,
            Expr::Var(Var::B) => v.b,
            Expr::Var(Var::Qv) => v.qv,
            Expr::Neg(e) => -e.eval(v)?,
            Expr::Bin(op, l, r) => {
                let (a, b) = (l.eval(v)?, r.eval(v)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(ExprError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Call(f, args) => {
                let a = args[0].eval(v)?;
                match f {
                    Func::Sin => a.sin(),
                    Func::Cos => a.cos(),
                    Func::Exp => a.exp(),
                    Func::Tanh => a.tanh(),
                    Func::Abs => a.abs(),
                    Func::Sqrt => {
                        if a < 0.0 {
                            return Err(ExprError::NegativeSqrt(a));
                        }
                        a.sqrt()
                    }
                    Func::Min => a.min(args[1].eval(v)?),
                    Func::Max => a.max(args[1].eval(v)?),
                }
            }
        })
    }

    pub fn uses(&self, var: Var) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Neg(e) => e.uses(var),
            Expr::Bin(_, l, r) => l.uses(var) || r.uses(var),
            Expr::Call(_, args) => args.iter().any(|a| a.uses(var)),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(c) => write!(f, "{c:?}"),
            Expr::Var(v) => f.write_str(match v {
                Var::T => "t",
                Var::X => "x",
                Var::B => "b",
                Var::Qv => "qv",
            }),
            Expr::Neg(e) => write!(f, "-({e})"),
            Expr::Bin(op, l, r) => {
                let sym = match op {
                    BinOp::Add => '+',
                    BinOp::Sub => '-',
                    BinOp::Mul => '*',
                    BinOp::Div => '/',
                };
                write!(f, "({l} {sym} {r})")
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
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

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(c) => write!(f, "number {c}"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::End => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Pos {
    line: usize,
    column: usize,
}

fn syntax(pos: Pos, message: impl Into<String>) -> ExprError {
    ExprError::Syntax { line: pos.line, column: pos.column, message: message.into() }
}

fn tokenize(src: &str) -> Result<Vec<(Tok, Pos)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let single = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            ',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = single {
            out.push((tok, pos));
            i += 1;
            col += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let value = text.parse::<f64>().map_err(|_| syntax(pos, format!("malformed number `{text}`")))?;
            out.push((Tok::Num(value), pos));
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
        } else {
            return Err(syntax(pos, format!("unexpected character `{c}`")));
        }
        col += i - start;
    }
    out.push((Tok::End, Pos { line, column: col }));
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, Pos)>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> (Tok, Pos) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ExprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(syntax(self.pos(), format!("expected {what}, found {}", self.peek())))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ExprError> {
        let (tok, pos) = self.bump();
        match tok {
            Tok::Num(c) => Ok(Expr::Num(c)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let var = match name.as_str() {
                    "t" => Some(Var::T),
                    "x" => Some(Var::X),
                    "b" => Some(Var::B),
                    "qv" => Some(Var::Qv),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Expr::Var(v));
                }
                let Some(func) = Func::from_name(&name) else {
                    return Err(ExprError::UnknownIdentifier { name, line: pos.line, column: pos.column });
                };
                self.expect(Tok::LParen, &format!("`(` after `{name}`"))?;
                let mut args = vec![self.expr()?];
                loop {
                    match self.peek() {
                        Tok::Comma => {
                            self.bump();
                            args.push(self.expr()?);
                        }
                        Tok::RParen => {
                            self.bump();
                            break;
                        }
                        other => {
                            return Err(syntax(self.pos(), format!("expected `,` or `)`, found {other}")));
                        }
                    }
                }
                if args.len() != func.arity() {
                    return Err(ExprError::Arity {
                        name,
                        expected: func.arity(),
                        found: args.len(),
                        line: pos.line,
                        column: pos.column,
                    });
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(syntax(pos, format!("expected a number, variable, function or `(`, found {other}"))),
        }
    }
}

pub fn parse_expr(src: &str) -> Result<Expr, ExprError> {
    let mut p = Parser { toks: tokenize(src)?, at: 0 };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.pos(), format!("unexpected {} after expression", p.peek())));
    }
    Ok(e)
}

/// Parsed coefficient text with its declared Lipschitz bound in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientExpr {
    pub source: String,
    pub tree: Expr,
    pub lipschitz_bound: Option<f64>,
}

impl CoefficientExpr {
    pub fn eval(&self, vars: &Vars) -> Result<f64, ExprError> {
        self.tree.eval(vars)
    }
}

pub fn parse_coefficient_expr(text: &str, lipschitz_bound: Option<f64>) -> Result<CoefficientExpr, ExprError> {
    Ok(CoefficientExpr { source: text.to_string(), tree: parse_expr(text)?, lipschitz_bound })
}
