//! The `.hps` declarative text format for construction specs.
//!
//! A file names a family and gives three rules:
//!
//! ```text
//! family middle_thirds
//! n(k)   = 2
//! c(k)   = 1/3
//! eta(k,l) = if l == 1 then 1/3^k else 0
//! ```
//!
//! Expressions close over `k` (and `l` inside `eta`), rational and `sqrt2`
//! literals, `let` bindings, `floor(a/b)`, and the running ratio product
//! `prodc(k) = c(1)·…·c(k)`. `#` starts a line comment. The grammar is
//! LL(1) up to a bounded lookahead on integer literals followed by `/`.

use crate::construction::{ConstructionSpec, GenError, SpecSource};
use crate::numeric::ExactScalar;
use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

/// Parse failure at a 1-based source position.
#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("parse error at {line}:{column}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: u32,
    pub column: u32,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum EvalError {
    #[error("rule {rule} is not defined")]
    MissingRule { rule: &'static str },
    #[error("at k={k}{}: {message}", fmt_gap(.l))]
    Failed { k: u32, l: Option<u64>, message: String },
    #[error("circular dependency through prodc at k={k}")]
    Circular { k: u32 },
}

fn fmt_gap(l: &Option<u64>) -> String {
    match l {
        Some(l) => format!(", l={l}"),
        None => String::new(),
    }
}

// ---------------------------------------------------------------------------
// Tokens
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(BigUint),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    EqEq,
    Lt,
    Le,
    Gt,
    Ge,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Int(v) => write!(f, "integer {v}"),
            Tok::Ident(s) => write!(f, "'{s}'"),
            Tok::LParen => write!(f, "'('"),
            Tok::RParen => write!(f, "')'"),
            Tok::Comma => write!(f, "','"),
            Tok::Assign => write!(f, "'='"),
            Tok::Plus => write!(f, "'+'"),
            Tok::Minus => write!(f, "'-'"),
            Tok::Star => write!(f, "'*'"),
            Tok::Slash => write!(f, "'/'"),
            Tok::Caret => write!(f, "'^'"),
            Tok::EqEq => write!(f, "'=='"),
            Tok::Lt => write!(f, "'<'"),
            Tok::Le => write!(f, "'<='"),
            Tok::Gt => write!(f, "'>'"),
            Tok::Ge => write!(f, "'>='"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: u32,
    column: u32,
}

fn lex(source: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let mut line = 1u32;
    let mut column = 1u32;
    let mut chars = source.chars().peekable();
    while let Some(&ch) = chars.peek() {
        let (tline, tcol) = (line, column);
        let bump = |c: char, line: &mut u32, column: &mut u32| {
            if c == '\n' {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
        };
        if ch.is_whitespace() {
            chars.next();
            bump(ch, &mut line, &mut column);
            continue;
        }
        if ch == '#' {
            while let Some(&c) = chars.peek() {
                chars.next();
                bump(c, &mut line, &mut column);
                if c == '\n' {
                    break;
                }
            }
            continue;
        }
        if ch.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    chars.next();
                    bump(c, &mut line, &mut column);
                } else {
                    break;
                }
            }
            out.push(Spanned {
                tok: Tok::Int(digits.parse().expect("digits")),
                line: tline,
                column: tcol,
            });
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == '_' {
            let mut ident = String::new();
            while let Some(&c) = chars.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    ident.push(c);
                    chars.next();
                    bump(c, &mut line, &mut column);
                } else {
                    break;
                }
            }
            out.push(Spanned {
                tok: Tok::Ident(ident),
                line: tline,
                column: tcol,
            });
            continue;
        }
        let simple = |t: Tok, chars: &mut std::iter::Peekable<std::str::Chars>,
                      line: &mut u32, column: &mut u32| {
            let c = chars.next().unwrap();
            if c == '\n' {
                *line += 1;
                *column = 1;
            } else {
                *column += 1;
            }
            t
        };
        let tok = match ch {
            '(' => simple(Tok::LParen, &mut chars, &mut line, &mut column),
            ')' => simple(Tok::RParen, &mut chars, &mut line, &mut column),
            ',' => simple(Tok::Comma, &mut chars, &mut line, &mut column),
            '+' => simple(Tok::Plus, &mut chars, &mut line, &mut column),
            '-' => simple(Tok::Minus, &mut chars, &mut line, &mut column),
            '*' => simple(Tok::Star, &mut chars, &mut line, &mut column),
            '/' => simple(Tok::Slash, &mut chars, &mut line, &mut column),
            '^' => simple(Tok::Caret, &mut chars, &mut line, &mut column),
            '=' => {
                chars.next();
                column += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    column += 1;
                    Tok::EqEq
                } else {
                    Tok::Assign
                }
            }
            '<' => {
                chars.next();
                column += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    column += 1;
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                chars.next();
                column += 1;
                if chars.peek() == Some(&'=') {
                    chars.next();
                    column += 1;
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            other => {
                return Err(ParseError {
                    line: tline,
                    column: tcol,
                    expected: "a token".to_string(),
                    found: format!("'{other}'"),
                })
            }
        };
        out.push(Spanned {
            tok,
            line: tline,
            column: tcol,
        });
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        column,
    });
    Ok(out)
}

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(BigUint),
    /// Rational literal `p/q` written with a slash between two integers.
    Ratio(BigUint, BigUint),
    Sqrt2,
    Var(String),
    Call(String, Vec<Expr>),
    Floor(Box<Expr>, Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    If(Box<Cond>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cond {
    pub op: CmpOp,
    pub lhs: Expr,
    pub rhs: Expr,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LetDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Expr,
}

/// Parsed `.hps` file: the family name, `let` bindings, and the three rules.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecAst {
    pub family: String,
    pub lets: Vec<LetDef>,
    pub rule_n: Option<Expr>,
    pub rule_c: Option<Expr>,
    pub rule_eta: Option<Expr>,
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn peek2(&self) -> &Spanned {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err(&self, expected: &str) -> ParseError {
        let t = self.peek();
        ParseError {
            line: t.line,
            column: t.column,
            expected: expected.to_string(),
            found: t.tok.to_string(),
        }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            Err(self.err(what))
        }
    }

    fn expect_ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => {
                self.next();
                Ok(s)
            }
            _ => Err(self.err(what)),
        }
    }

    fn parse_spec(&mut self) -> Result<SpecAst, ParseError> {
        match self.peek().tok.clone() {
            Tok::Ident(kw) if kw == "family" => {
                self.next();
            }
            _ => return Err(self.err("'family'")),
        }
        let family = self.expect_ident("a family name")?;
        let mut ast = SpecAst {
            family,
            lets: Vec::new(),
            rule_n: None,
            rule_c: None,
            rule_eta: None,
        };
        loop {
            match self.peek().tok.clone() {
                Tok::Eof => break,
                Tok::Ident(kw) if kw == "let" => {
                    self.next();
                    let name = self.expect_ident("a binding name")?;
                    self.expect(Tok::LParen, "'('")?;
                    let mut params = vec![self.expect_ident("a parameter name")?];
                    while self.peek().tok == Tok::Comma {
                        self.next();
                        params.push(self.expect_ident("a parameter name")?);
                    }
                    self.expect(Tok::RParen, "')'")?;
                    self.expect(Tok::Assign, "'='")?;
                    let body = self.parse_expr()?;
                    ast.lets.push(LetDef { name, params, body });
                }
                Tok::Ident(rule) if rule == "n" || rule == "c" || rule == "eta" => {
                    let pos_line = self.peek().line;
                    let pos_col = self.peek().column;
                    self.next();
                    self.expect(Tok::LParen, "'('")?;
                    let first = self.expect_ident("'k'")?;
                    if first != "k" {
                        return Err(ParseError {
                            line: pos_line,
                            column: pos_col,
                            expected: "rule argument 'k'".to_string(),
                            found: format!("'{first}'"),
                        });
                    }
                    if rule == "eta" {
                        self.expect(Tok::Comma, "','")?;
                        let second = self.expect_ident("'l'")?;
                        if second != "l" {
                            return Err(ParseError {
                                line: pos_line,
                                column: pos_col,
                                expected: "rule argument 'l'".to_string(),
                                found: format!("'{second}'"),
                            });
                        }
                    }
                    self.expect(Tok::RParen, "')'")?;
                    self.expect(Tok::Assign, "'='")?;
                    let body = self.parse_expr()?;
                    let slot = match rule.as_str() {
                        "n" => &mut ast.rule_n,
                        "c" => &mut ast.rule_c,
                        _ => &mut ast.rule_eta,
                    };
                    if slot.is_some() {
                        return Err(ParseError {
                            line: pos_line,
                            column: pos_col,
                            expected: "a single definition per rule".to_string(),
                            found: format!("duplicate rule '{rule}'"),
                        });
                    }
                    *slot = Some(body);
                }
                _ => return Err(self.err("'let', 'n', 'c', 'eta', or end of file")),
            }
        }
        Ok(ast)
    }

    fn parse_expr(&mut self) -> Result<Expr, ParseError> {
        if let Tok::Ident(kw) = &self.peek().tok {
            if kw == "if" {
                self.next();
                let cond = self.parse_cond()?;
                match self.peek().tok.clone() {
                    Tok::Ident(t) if t == "then" => {
                        self.next();
                    }
                    _ => return Err(self.err("'then'")),
                }
                let then_branch = self.parse_expr()?;
                match self.peek().tok.clone() {
                    Tok::Ident(t) if t == "else" => {
                        self.next();
                    }
                    _ => return Err(self.err("'else'")),
                }
                let else_branch = self.parse_expr()?;
                return Ok(Expr::If(
                    Box::new(cond),
                    Box::new(then_branch),
                    Box::new(else_branch),
                ));
            }
        }
        self.parse_arith()
    }

    fn parse_cond(&mut self) -> Result<Cond, ParseError> {
        let lhs = self.parse_arith()?;
        let op = match self.peek().tok {
            Tok::EqEq => CmpOp::Eq,
            Tok::Lt => CmpOp::Lt,
            Tok::Le => CmpOp::Le,
            Tok::Gt => CmpOp::Gt,
            Tok::Ge => CmpOp::Ge,
            _ => return Err(self.err("a comparison operator")),
        };
        self.next();
        let rhs = self.parse_arith()?;
        Ok(Cond { op, lhs, rhs })
    }

    fn parse_arith(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_term()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => break,
            };
            self.next();
            let rhs = self.parse_term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.parse_factor()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => break,
            };
            self.next();
            let rhs = self.parse_factor()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn parse_factor(&mut self) -> Result<Expr, ParseError> {
        let base = self.parse_atom()?;
        if self.peek().tok == Tok::Caret {
            self.next();
            // Exponents are atoms (integers, variables, or parenthesized
            // expressions) that must evaluate to integers.
            let exp = self.parse_atom()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn parse_atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().tok.clone() {
            Tok::Int(v) => {
                self.next();
                // Rational literal: INT '/' INT, decided by two-token
                // lookahead so that `1/(2+k)` still parses as division.
                if self.peek().tok == Tok::Slash {
                    if let Tok::Int(q) = self.peek2().tok.clone() {
                        self.next();
                        self.next();
                        return Ok(Expr::Ratio(v, q));
                    }
                }
                Ok(Expr::Int(v))
            }
            Tok::Ident(name) => {
                if name == "if" || name == "then" || name == "else" || name == "let"
                    || name == "family"
                {
                    return Err(self.err("an expression atom"));
                }
                self.next();
                match name.as_str() {
                    "sqrt2" => Ok(Expr::Sqrt2),
                    "k" | "l" => Ok(Expr::Var(name)),
                    "floor" => {
                        self.expect(Tok::LParen, "'('")?;
                        let num = self.parse_expr()?;
                        self.expect(Tok::Slash, "'/' inside floor")?;
                        let den = self.parse_expr()?;
                        self.expect(Tok::RParen, "')'")?;
                        Ok(Expr::Floor(Box::new(num), Box::new(den)))
                    }
                    _ => {
                        if self.peek().tok == Tok::LParen {
                            self.next();
                            let mut args = vec![self.parse_expr()?];
                            while self.peek().tok == Tok::Comma {
                                self.next();
                                args.push(self.parse_expr()?);
                            }
                            self.expect(Tok::RParen, "')'")?;
                            Ok(Expr::Call(name, args))
                        } else {
                            // Bare identifier: a let parameter in scope.
                            Ok(Expr::Var(name))
                        }
                    }
                }
            }
            Tok::LParen => {
                self.next();
                let inner = self.parse_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(inner)
            }
            _ => Err(self.err("an expression atom")),
        }
    }
}

/// Parse `.hps` source text into an AST.
pub fn parse(source: &str) -> Result<SpecAst, ParseError> {
    let toks = lex(source)?;
    let mut parser = Parser { toks, pos: 0 };
    parser.parse_spec()
}

/// Parse a single exact literal expression (no variables, no rules), as used
/// by CLI flags: `1/3`, `sqrt2/2`, `(1+sqrt2)/4`.
pub fn parse_exact_literal(text: &str) -> Result<ExactScalar, String> {
    let toks = lex(text).map_err(|e| e.to_string())?;
    let mut parser = Parser { toks, pos: 0 };
    let expr = parser.parse_expr().map_err(|e| e.to_string())?;
    if parser.peek().tok != Tok::Eof {
        return Err(format!("trailing input after literal: {}", parser.peek().tok));
    }
    let evaluator = Evaluator::new(&SpecAst {
        family: String::new(),
        lets: Vec::new(),
        rule_n: None,
        rule_c: None,
        rule_eta: None,
    });
    let env = Env::empty();
    let v = evaluator.eval(&expr, &env).map_err(|e| e.message)?;
    Ok(v.into_scalar())
}

// ---------------------------------------------------------------------------
// Pretty printer
// ---------------------------------------------------------------------------

/// Canonical text form; `parse(pretty(ast)) == ast`.
pub fn pretty(ast: &SpecAst) -> String {
    let mut out = format!("family {}\n", ast.family);
    for def in &ast.lets {
        out.push_str(&format!(
            "let {}({}) = {}\n",
            def.name,
            def.params.join(", "),
            pp_expr(&def.body)
        ));
    }
    if let Some(e) = &ast.rule_n {
        out.push_str(&format!("n(k) = {}\n", pp_expr(e)));
    }
    if let Some(e) = &ast.rule_c {
        out.push_str(&format!("c(k) = {}\n", pp_expr(e)));
    }
    if let Some(e) = &ast.rule_eta {
        out.push_str(&format!("eta(k, l) = {}\n", pp_expr(e)));
    }
    out
}

fn pp_expr(e: &Expr) -> String {
    match e {
        Expr::Int(v) => v.to_string(),
        Expr::Ratio(p, q) => format!("{p}/{q}"),
        Expr::Sqrt2 => "sqrt2".to_string(),
        Expr::Var(v) => v.clone(),
        Expr::Call(name, args) => format!(
            "{name}({})",
            args.iter().map(pp_expr).collect::<Vec<_>>().join(", ")
        ),
        Expr::Floor(a, b) => format!("floor(({}) / ({}))", pp_expr(a), pp_expr(b)),
        Expr::Bin(op, a, b) => {
            let sym = match op {
                BinOp::Add => "+",
                BinOp::Sub => "-",
                BinOp::Mul => "*",
                BinOp::Div => "/",
            };
            format!("({} {sym} ({}))", pp_expr(a), pp_expr(b))
        }
        Expr::Pow(a, b) => format!("({})^({})", pp_expr(a), pp_expr(b)),
        Expr::If(c, t, f) => {
            let sym = match c.op {
                CmpOp::Eq => "==",
                CmpOp::Lt => "<",
                CmpOp::Le => "<=",
                CmpOp::Gt => ">",
                CmpOp::Ge => ">=",
            };
            format!(
                "(if {} {sym} {} then {} else {})",
                pp_expr(&c.lhs),
                pp_expr(&c.rhs),
                pp_expr(t),
                pp_expr(f)
            )
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Value {
    Int(BigInt),
    Scalar(ExactScalar),
}

impl Value {
    fn into_scalar(self) -> ExactScalar {
        match self {
            Value::Int(v) => ExactScalar::from_bigint(v),
            Value::Scalar(s) => s,
        }
    }

    fn as_int(&self) -> Option<BigInt> {
        match self {
            Value::Int(v) => Some(v.clone()),
            Value::Scalar(s) => {
                let r = s.as_rational()?;
                r.is_integer().then(|| r.to_integer())
            }
        }
    }
}

struct Env {
    vars: HashMap<String, Value>,
}

impl Env {
    fn empty() -> Self {
        Self {
            vars: HashMap::new(),
        }
    }

    fn with(bindings: &[(&str, Value)]) -> Self {
        let mut vars = HashMap::new();
        for (name, v) in bindings {
            vars.insert((*name).to_string(), v.clone());
        }
        Self { vars }
    }
}

struct EvalCtx {
    message: String,
}

impl EvalCtx {
    fn err(msg: impl Into<String>) -> EvalCtx {
        EvalCtx {
            message: msg.into(),
        }
    }
}

struct Evaluator<'a> {
    lets: HashMap<&'a str, &'a LetDef>,
    ast: &'a SpecAst,
    /// Memoized ratio products `c(1)···c(j)` and an in-progress guard for
    /// cycle detection through `prodc`.
    prodc_cache: Mutex<HashMap<u32, ExactScalar>>,
    in_progress: Mutex<Vec<u32>>,
}

impl<'a> Evaluator<'a> {
    fn new(ast: &'a SpecAst) -> Self {
        let lets = ast.lets.iter().map(|d| (d.name.as_str(), d)).collect();
        Self {
            lets,
            ast,
            prodc_cache: Mutex::new(HashMap::new()),
            in_progress: Mutex::new(Vec::new()),
        }
    }

    fn eval(&self, expr: &Expr, env: &Env) -> Result<Value, EvalCtx> {
        match expr {
            Expr::Int(v) => Ok(Value::Int(BigInt::from(v.clone()))),
            Expr::Ratio(p, q) => {
                if q.is_zero() {
                    return Err(EvalCtx::err("rational literal with zero denominator"));
                }
                Ok(Value::Scalar(ExactScalar::from_big_rational(
                    BigRational::new(BigInt::from(p.clone()), BigInt::from(q.clone())),
                )))
            }
            Expr::Sqrt2 => Ok(Value::Scalar(ExactScalar::sqrt2())),
            Expr::Var(name) => env
                .vars
                .get(name)
                .cloned()
                .ok_or_else(|| EvalCtx::err(format!("unbound variable '{name}'"))),
            Expr::Call(name, args) => self.eval_call(name, args, env),
            Expr::Floor(a, b) => {
                let num = self.eval(a, env)?.into_scalar();
                let den = self.eval(b, env)?.into_scalar();
                let q = num
                    .checked_div(&den)
                    .map_err(|_| EvalCtx::err("floor with zero denominator"))?;
                Ok(Value::Int(q.floor()))
            }
            Expr::Bin(op, a, b) => {
                let lhs = self.eval(a, env)?;
                let rhs = self.eval(b, env)?;
                match (op, &lhs, &rhs) {
                    (BinOp::Add, Value::Int(x), Value::Int(y)) => Ok(Value::Int(x + y)),
                    (BinOp::Sub, Value::Int(x), Value::Int(y)) => Ok(Value::Int(x - y)),
                    (BinOp::Mul, Value::Int(x), Value::Int(y)) => Ok(Value::Int(x * y)),
                    (BinOp::Add, _, _) => Ok(Value::Scalar(
                        &lhs.into_scalar() + &rhs.into_scalar(),
                    )),
                    (BinOp::Sub, _, _) => Ok(Value::Scalar(
                        &lhs.into_scalar() - &rhs.into_scalar(),
                    )),
                    (BinOp::Mul, _, _) => Ok(Value::Scalar(
                        &lhs.into_scalar() * &rhs.into_scalar(),
                    )),
                    (BinOp::Div, _, _) => {
                        let d = rhs.into_scalar();
                        lhs.into_scalar()
                            .checked_div(&d)
                            .map(Value::Scalar)
                            .map_err(|_| EvalCtx::err("division by zero"))
                    }
                }
            }
            Expr::Pow(base, exp) => {
                let b = self.eval(base, env)?;
                let e = self
                    .eval(exp, env)?
                    .as_int()
                    .ok_or_else(|| EvalCtx::err("exponent must evaluate to an integer"))?;
                let e = e
                    .to_i64()
                    .ok_or_else(|| EvalCtx::err("exponent out of range"))?;
                match (&b, e) {
                    (Value::Int(x), e) if e >= 0 => {
                        if e > 4096 {
                            return Err(EvalCtx::err("exponent out of range"));
                        }
                        Ok(Value::Int(x.pow(e as u32)))
                    }
                    _ => {
                        let s = b.into_scalar();
                        if e < 0 && s.is_zero() {
                            return Err(EvalCtx::err("negative power of zero"));
                        }
                        if e.unsigned_abs() > 4096 {
                            return Err(EvalCtx::err("exponent out of range"));
                        }
                        s.pow(e)
                            .map(Value::Scalar)
                            .map_err(|e| EvalCtx::err(e.to_string()))
                    }
                }
            }
            Expr::If(cond, then_branch, else_branch) => {
                let lhs = self.eval(&cond.lhs, env)?.into_scalar();
                let rhs = self.eval(&cond.rhs, env)?.into_scalar();
                let take_then = match cond.op {
                    CmpOp::Eq => lhs == rhs,
                    CmpOp::Lt => lhs < rhs,
                    CmpOp::Le => lhs <= rhs,
                    CmpOp::Gt => lhs > rhs,
                    CmpOp::Ge => lhs >= rhs,
                };
                if take_then {
                    self.eval(then_branch, env)
                } else {
                    self.eval(else_branch, env)
                }
            }
        }
    }

    fn eval_call(&self, name: &str, args: &[Expr], env: &Env) -> Result<Value, EvalCtx> {
        if name == "prodc" {
            if args.len() != 1 {
                return Err(EvalCtx::err("prodc takes one argument"));
            }
            let j = self
                .eval(&args[0], env)?
                .as_int()
                .ok_or_else(|| EvalCtx::err("prodc argument must be an integer"))?;
            let j = j
                .to_u32()
                .ok_or_else(|| EvalCtx::err("prodc argument out of range"))?;
            return self.prodc(j).map(Value::Scalar);
        }
        let def = self
            .lets
            .get(name)
            .ok_or_else(|| EvalCtx::err(format!("unknown function '{name}'")))?;
        if def.params.len() != args.len() {
            return Err(EvalCtx::err(format!(
                "'{name}' takes {} argument(s), got {}",
                def.params.len(),
                args.len()
            )));
        }
        let mut vars = HashMap::new();
        for (param, arg) in def.params.iter().zip(args) {
            vars.insert(param.clone(), self.eval(arg, env)?);
        }
        self.eval(&def.body, &Env { vars })
    }

    /// `prodc(j) = c(1)···c(j)`, with reentrancy detection so a `c` rule that
    /// consults `prodc(k)` for its own level is reported, not looped.
    fn prodc(&self, j: u32) -> Result<ExactScalar, EvalCtx> {
        if j == 0 {
            return Ok(ExactScalar::one());
        }
        if let Some(v) = self.prodc_cache.lock().unwrap().get(&j) {
            return Ok(v.clone());
        }
        let rule = self
            .ast
            .rule_c
            .as_ref()
            .ok_or_else(|| EvalCtx::err("prodc needs the c(k) rule"))?;
        let mut acc = ExactScalar::one();
        for i in 1..=j {
            {
                let mut guard = self.in_progress.lock().unwrap();
                if guard.contains(&i) {
                    return Err(EvalCtx::err(format!(
                        "circular dependency: c({i}) depends on prodc({j})"
                    )));
                }
                guard.push(i);
            }
            let env = Env::with(&[("k", Value::Int(BigInt::from(i)))]);
            let res = self.eval(rule, &env);
            self.in_progress.lock().unwrap().pop();
            acc = &acc * &res?.into_scalar();
        }
        self.prodc_cache.lock().unwrap().insert(j, acc.clone());
        Ok(acc)
    }
}

/// A [`SpecSource`] backed by a parsed AST. Range errors are reported with
/// their `(k, l)` witness at evaluation time.
pub struct AstSource {
    ast: SpecAst,
}

impl AstSource {
    pub fn new(ast: SpecAst) -> Result<Self, EvalError> {
        if ast.rule_n.is_none() {
            return Err(EvalError::MissingRule { rule: "n" });
        }
        if ast.rule_c.is_none() {
            return Err(EvalError::MissingRule { rule: "c" });
        }
        if ast.rule_eta.is_none() {
            return Err(EvalError::MissingRule { rule: "eta" });
        }
        Ok(Self { ast })
    }

    pub fn ast(&self) -> &SpecAst {
        &self.ast
    }
}

impl SpecSource for AstSource {
    fn family_name(&self) -> &str {
        &self.ast.family
    }

    fn branching(&self, k: u32) -> Result<u64, GenError> {
        let evaluator = Evaluator::new(&self.ast);
        let env = Env::with(&[("k", Value::Int(BigInt::from(k)))]);
        let v = evaluator
            .eval(self.ast.rule_n.as_ref().unwrap(), &env)
            .map_err(|e| GenError::new(k, e.message))?;
        let n = v
            .as_int()
            .ok_or_else(|| GenError::new(k, format!("n({k}) is not an integer")))?;
        let n = n
            .to_u64()
            .ok_or_else(|| GenError::new(k, format!("n({k}) out of range")))?;
        if n < 2 {
            return Err(GenError::new(k, format!("n({k}) = {n} must be at least 2")));
        }
        Ok(n)
    }

    fn ratio(&self, k: u32) -> Result<ExactScalar, GenError> {
        let evaluator = Evaluator::new(&self.ast);
        let env = Env::with(&[("k", Value::Int(BigInt::from(k)))]);
        let v = evaluator
            .eval(self.ast.rule_c.as_ref().unwrap(), &env)
            .map_err(|e| GenError::new(k, e.message))?
            .into_scalar();
        if !v.is_positive() || v >= ExactScalar::one() {
            return Err(GenError::new(k, format!("c out of range at k={k}: {v}")));
        }
        Ok(v)
    }

    fn gap(&self, k: u32, l: u64) -> Result<ExactScalar, GenError> {
        let evaluator = Evaluator::new(&self.ast);
        let env = Env::with(&[
            ("k", Value::Int(BigInt::from(k))),
            ("l", Value::Int(BigInt::from(l))),
        ]);
        let v = evaluator
            .eval(self.ast.rule_eta.as_ref().unwrap(), &env)
            .map_err(|e| GenError::at_gap(k, l, e.message))?
            .into_scalar();
        if v.is_negative() {
            return Err(GenError::at_gap(
                k,
                l,
                format!("negative gap at k={k}, l={l}: {v}"),
            ));
        }
        Ok(v)
    }
}

/// Evaluate an AST into a construction spec. Probes level 1 eagerly so that
/// range errors surface with their smallest witness.
pub fn eval_spec(ast: SpecAst, max_depth: u32) -> Result<ConstructionSpec, EvalError> {
    let source = AstSource::new(ast)?;
    // Early probe: n, c and the edge gaps at k = 1.
    source.branching(1).map_err(gen_to_eval)?;
    source.ratio(1).map_err(gen_to_eval)?;
    source.gap(1, 0).map_err(gen_to_eval)?;
    Ok(ConstructionSpec::new(Arc::new(source), max_depth))
}

fn gen_to_eval(e: GenError) -> EvalError {
    EvalError::Failed {
        k: e.level,
        l: e.gap_index,
        message: e.message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIDDLE_THIRDS: &str =
        "family u\nn(k)=2\nc(k)=1/3\neta(k,l)=if l==1 then 1/3^k else 0";

    #[test]
    fn parses_middle_thirds() {
        let ast = parse(MIDDLE_THIRDS).unwrap();
        assert_eq!(ast.family, "u");
        assert!(ast.rule_n.is_some() && ast.rule_c.is_some() && ast.rule_eta.is_some());
    }

    #[test]
    fn middle_thirds_eval_matches_builtin() {
        let ast = parse(MIDDLE_THIRDS).unwrap();
        let spec = eval_spec(ast, 6).unwrap();
        assert!(spec.validate(6).unwrap().is_clean());
        let builtin = crate::construction::builtin_spec("uniform:2,1/3", 6).unwrap();
        for k in 1..=6u32 {
            let a = spec.level(k).unwrap();
            let b = builtin.level(k).unwrap();
            assert_eq!(a.n, b.n);
            assert_eq!(a.c, b.c);
            assert_eq!(a.eta, b.eta);
        }
    }

    #[test]
    fn syntax_error_position() {
        let err = parse("family x\nn(k)=").unwrap_err();
        assert_eq!(err.line, 2);
        assert_eq!(err.expected, "an expression atom");
    }

    #[test]
    fn duplicate_rule_rejected() {
        let err = parse("family x\nn(k)=2\nn(k)=3").unwrap_err();
        assert!(err.found.contains("duplicate"));
    }

    #[test]
    fn missing_rule_rejected_at_eval() {
        let ast = parse("family x\nn(k)=2\nc(k)=1/3").unwrap();
        assert!(matches!(
            eval_spec(ast, 4),
            Err(EvalError::MissingRule { rule: "eta" })
        ));
    }

    #[test]
    fn c_out_of_range_witnessed_at_k1() {
        let ast = parse("family x\nn(k)=2\nc(k)=2\neta(k,l)=0").unwrap();
        match eval_spec(ast, 4) {
            Err(EvalError::Failed { k: 1, message, .. }) => {
                assert!(message.contains("c out of range"), "{message}");
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn rational_literal_lookahead() {
        // `1/(3)` is a division, `1/3` a literal; both evaluate equally.
        let a = parse_exact_literal("1/3").unwrap();
        let b = parse_exact_literal("1/(3)").unwrap();
        assert_eq!(a, b);
        let c = parse_exact_literal("sqrt2/2").unwrap();
        assert_eq!(c, &ExactScalar::sqrt2() / &ExactScalar::from_int(2));
    }

    #[test]
    fn pow_binds_tighter_than_division() {
        // 1/3^2 = (1/3)^2 by the literal rule; 6/(2^2) forces division.
        let a = parse_exact_literal("1/3^2").unwrap();
        assert_eq!(a, ExactScalar::from_ratio(1, 9));
        let b = parse_exact_literal("6/(2^2)").unwrap();
        assert_eq!(b, ExactScalar::from_ratio(3, 2));
    }

    #[test]
    fn floor_is_exact() {
        let v = parse_exact_literal("floor(7/2)").unwrap();
        assert_eq!(v, ExactScalar::from_int(3));
    }

    #[test]
    fn roundtrip_via_pretty() {
        let ast = parse(MIDDLE_THIRDS).unwrap();
        let printed = pretty(&ast);
        let reparsed = parse(&printed).unwrap();
        assert_eq!(ast, reparsed);
    }

    #[test]
    fn circular_prodc_detected() {
        let src = "family x\nn(k)=2\nc(k)=prodc(k)\neta(k,l)=0";
        let ast = parse(src).unwrap();
        let source = AstSource::new(ast).unwrap();
        let err = source.ratio(1).unwrap_err();
        assert!(err.message.contains("circular"), "{}", err.message);
    }

    #[test]
    fn let_bindings_work() {
        let src = "family x\nlet half(t) = t/(2)\nn(k)=2\nc(k)=half(1)\neta(k,l)=if l==1 then 1 - 2*prodc(k)/prodc(k-1) else 0";
        let ast = parse(src).unwrap();
        let source = AstSource::new(ast).unwrap();
        assert_eq!(source.ratio(3).unwrap(), ExactScalar::from_ratio(1, 2));
    }
}
