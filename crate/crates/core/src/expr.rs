//! Scalar expression language for metric coefficient functions.
//!
//! The grammar supports `+ - * / ^`, the functions `exp log sinh cosh tanh
//! sech sqrt sin cos`, numeric literals, and the variable names the caller
//! passes in (`r` or `t` for rotational profiles, `x`/`y` for conformal
//! factors). Parsed expressions are compiled to a flat postfix tape; the tape
//! evaluates on plain `f64` and on second-order jets, so first and second
//! derivatives come out of the same pass without finite differencing.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func {
    Exp,
    Log,
    Sinh,
    Cosh,
    Tanh,
    Sech,
    Sqrt,
    Sin,
    Cos,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "tanh" => Func::Tanh,
            "sech" => Func::Sech,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Ast {
    Num(f64),
    Var(usize),
    Neg(Box<Ast>),
    Add(Box<Ast>, Box<Ast>),
    Sub(Box<Ast>, Box<Ast>),
    Mul(Box<Ast>, Box<Ast>),
    Div(Box<Ast>, Box<Ast>),
    Pow(Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

#[derive(Debug, Clone, Copy)]
struct Token {
    kind: TokKind,
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(usize, usize), // byte range into the source
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str, line: usize, col0: usize) -> Self {
        Lexer {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            line,
            col: col0,
        }
    }

    fn error(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn next_token(&mut self) -> Result<Token> {
        while self.pos < self.bytes.len() && (self.bytes[self.pos] as char).is_whitespace() {
            self.advance();
        }
        let (line, col) = (self.line, self.col);
        if self.pos >= self.bytes.len() {
            return Ok(Token {
                kind: TokKind::Eof,
                line,
                col,
            });
        }
        let c = self.bytes[self.pos] as char;
        let kind = match c {
            '+' => {
                self.advance();
                TokKind::Plus
            }
            '-' | '\u{2212}' => {
                // accept ASCII hyphen; the source is validated as UTF-8 text
                self.advance();
                TokKind::Minus
            }
            '*' => {
                self.advance();
                TokKind::Star
            }
            '/' => {
                self.advance();
                TokKind::Slash
            }
            '^' => {
                self.advance();
                TokKind::Caret
            }
            '(' => {
                self.advance();
                TokKind::LParen
            }
            ')' => {
                self.advance();
                TokKind::RParen
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = self.pos;
                while self.pos < self.bytes.len() {
                    let d = self.bytes[self.pos] as char;
                    if d.is_ascii_digit() || d == '.' {
                        self.advance();
                    } else if (d == 'e' || d == 'E')
                        && self.pos + 1 < self.bytes.len()
                        && {
                            let n = self.bytes[self.pos + 1] as char;
                            n.is_ascii_digit() || n == '+' || n == '-'
                        }
                    {
                        self.advance();
                        if !(self.bytes[self.pos] as char).is_ascii_digit() {
                            self.advance(); // sign
                        }
                    } else {
                        break;
                    }
                }
                let text = &self.src[start..self.pos];
                let v: f64 = text
                    .parse()
                    .map_err(|_| self.error(format!("invalid number `{text}`")))?;
                TokKind::Num(v)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = self.pos;
                while self.pos < self.bytes.len() {
                    let d = self.bytes[self.pos] as char;
                    if d.is_ascii_alphanumeric() || d == '_' {
                        self.advance();
                    } else {
                        break;
                    }
                }
                TokKind::Ident(start, self.pos)
            }
            other => return Err(self.error(format!("unexpected character `{other}`"))),
        };
        Ok(Token { kind, line, col })
    }

    fn advance(&mut self) {
        if self.bytes[self.pos] == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        self.pos += 1;
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: Token,
    vars: &'a [&'a str],
    src: &'a str,
}

impl<'a> Parser<'a> {
    fn error_at(&self, tok: Token, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: tok.line,
            col: tok.col,
            msg: msg.into(),
        }
    }

    fn bump(&mut self) -> Result<Token> {
        let tok = self.current;
        self.current = self.lexer.next_token()?;
        Ok(tok)
    }

    fn expect(&mut self, kind: TokKind, what: &str) -> Result<()> {
        if self.current.kind == kind {
            self.bump()?;
            Ok(())
        } else {
            Err(self.error_at(self.current, format!("expected {what}")))
        }
    }

    // expr := term (("+" | "-") term)*
    fn expr(&mut self) -> Result<Ast> {
        let mut lhs = self.term()?;
        loop {
            match self.current.kind {
                TokKind::Plus => {
                    self.bump()?;
                    lhs = Ast::Add(Box::new(lhs), Box::new(self.term()?));
                }
                TokKind::Minus => {
                    self.bump()?;
                    lhs = Ast::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // term := unary (("*" | "/") unary)*
    fn term(&mut self) -> Result<Ast> {
        let mut lhs = self.unary()?;
        loop {
            match self.current.kind {
                TokKind::Star => {
                    self.bump()?;
                    lhs = Ast::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                TokKind::Slash => {
                    self.bump()?;
                    lhs = Ast::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    // unary := "-" unary | power
    fn unary(&mut self) -> Result<Ast> {
        if self.current.kind == TokKind::Minus {
            self.bump()?;
            return Ok(Ast::Neg(Box::new(self.unary()?)));
        }
        if self.current.kind == TokKind::Plus {
            self.bump()?;
            return self.unary();
        }
        self.power()
    }

    // power := atom ("^" unary)?   (right associative, binds tighter than unary minus on the left)
    fn power(&mut self) -> Result<Ast> {
        let base = self.atom()?;
        if self.current.kind == TokKind::Caret {
            self.bump()?;
            let exp = self.unary()?;
            return Ok(Ast::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Ast> {
        let tok = self.current;
        match tok.kind {
            TokKind::Num(v) => {
                self.bump()?;
                Ok(Ast::Num(v))
            }
            TokKind::LParen => {
                self.bump()?;
                let inner = self.expr()?;
                self.expect(TokKind::RParen, "closing `)`")?;
                Ok(inner)
            }
            TokKind::Ident(a, b) => {
                let name = &self.src[a..b];
                self.bump()?;
                if self.current.kind == TokKind::LParen {
                    let func = Func::from_name(name).ok_or_else(|| {
                        self.error_at(tok, format!("unknown function `{name}`"))
                    })?;
                    self.bump()?;
                    let arg = self.expr()?;
                    self.expect(TokKind::RParen, "closing `)` of function call")?;
                    Ok(Ast::Call(func, Box::new(arg)))
                } else if name == "pi" {
                    Ok(Ast::Num(std::f64::consts::PI))
                } else if let Some(idx) = self.vars.iter().position(|v| *v == name) {
                    Ok(Ast::Var(idx))
                } else {
                    Err(self.error_at(
                        tok,
                        format!(
                            "unknown identifier `{name}` (allowed variables: {})",
                            self.vars.join(", ")
                        ),
                    ))
                }
            }
            TokKind::Eof => Err(self.error_at(tok, "unexpected end of expression")),
            _ => Err(self.error_at(tok, "expected a number, variable, or `(`")),
        }
    }
}

/// One instruction of the compiled postfix tape.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Const(f64),
    Var(usize),
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Pow,
    PowConst(f64),
    Call(Func),
}

/// A parsed and compiled scalar expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    code: Vec<Instr>,
    source: String,
    n_vars: usize,
}

/// Second-order jet: value plus first and second derivative with respect to
/// one chosen variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet2 {
    pub fn constant(v: f64) -> Jet2 {
        Jet2 { v, d1: 0.0, d2: 0.0 }
    }

    pub fn variable(v: f64) -> Jet2 {
        Jet2 { v, d1: 1.0, d2: 0.0 }
    }

    fn add(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v + o.v,
            d1: self.d1 + o.d1,
            d2: self.d2 + o.d2,
        }
    }

    fn sub(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v - o.v,
            d1: self.d1 - o.d1,
            d2: self.d2 - o.d2,
        }
    }

    fn mul(self, o: Jet2) -> Jet2 {
        Jet2 {
            v: self.v * o.v,
            d1: self.d1 * o.v + self.v * o.d1,
            d2: self.d2 * o.v + 2.0 * self.d1 * o.d1 + self.v * o.d2,
        }
    }

    fn div(self, o: Jet2) -> Jet2 {
        let inv = 1.0 / o.v;
        let v = self.v * inv;
        let d1 = (self.d1 - v * o.d1) * inv;
        let d2 = (self.d2 - 2.0 * d1 * o.d1 - v * o.d2) * inv;
        Jet2 { v, d1, d2 }
    }

    fn neg(self) -> Jet2 {
        Jet2 {
            v: -self.v,
            d1: -self.d1,
            d2: -self.d2,
        }
    }

    /// Chain rule through a scalar function with value `f`, derivative `fp`,
    /// second derivative `fpp` at `self.v`.
    fn chain(self, f: f64, fp: f64, fpp: f64) -> Jet2 {
        Jet2 {
            v: f,
            d1: fp * self.d1,
            d2: fpp * self.d1 * self.d1 + fp * self.d2,
        }
    }

    fn pow_const(self, k: f64) -> Jet2 {
        if k == 0.0 {
            return Jet2::constant(1.0);
        }
        if k == 1.0 {
            return self;
        }
        if k == 2.0 {
            return self.mul(self);
        }
        let f = powf_signed(self.v, k);
        let fp = k * powf_signed(self.v, k - 1.0);
        let fpp = k * (k - 1.0) * powf_signed(self.v, k - 2.0);
        self.chain(f, fp, fpp)
    }

    fn apply(self, func: Func) -> Jet2 {
        let u = self.v;
        match func {
            Func::Exp => {
                let e = u.exp();
                self.chain(e, e, e)
            }
            Func::Log => self.chain(u.ln(), 1.0 / u, -1.0 / (u * u)),
            Func::Sinh => self.chain(u.sinh(), u.cosh(), u.sinh()),
            Func::Cosh => self.chain(u.cosh(), u.sinh(), u.cosh()),
            Func::Tanh => {
                let t = u.tanh();
                let s2 = 1.0 - t * t; // sech^2
                self.chain(t, s2, -2.0 * s2 * t)
            }
            Func::Sech => {
                let s = 1.0 / u.cosh();
                let t = u.tanh();
                self.chain(s, -s * t, s * (t * t - s * s))
            }
            Func::Sqrt => {
                let s = u.sqrt();
                self.chain(s, 0.5 / s, -0.25 / (s * s * s))
            }
            Func::Sin => self.chain(u.sin(), u.cos(), -u.sin()),
            Func::Cos => self.chain(u.cos(), -u.sin(), -u.cos()),
        }
    }
}

/// `x^k` for possibly negative `x` when `k` is an integer; NaN otherwise.
fn powf_signed(x: f64, k: f64) -> f64 {
    if x >= 0.0 {
        x.powf(k)
    } else if k == k.trunc() && k.abs() < 1e15 {
        let m = (-x).powf(k);
        if (k as i64) % 2 == 0 {
            m
        } else {
            -m
        }
    } else {
        f64::NAN
    }
}

fn apply_f64(func: Func, u: f64) -> f64 {
    match func {
        Func::Exp => u.exp(),
        Func::Log => u.ln(),
        Func::Sinh => u.sinh(),
        Func::Cosh => u.cosh(),
        Func::Tanh => u.tanh(),
        Func::Sech => 1.0 / u.cosh(),
        Func::Sqrt => u.sqrt(),
        Func::Sin => u.sin(),
        Func::Cos => u.cos(),
    }
}

fn compile(ast: &Ast, code: &mut Vec<Instr>) {
    match ast {
        Ast::Num(v) => code.push(Instr::Const(*v)),
        Ast::Var(i) => code.push(Instr::Var(*i)),
        Ast::Neg(a) => {
            compile(a, code);
            code.push(Instr::Neg);
        }
        Ast::Add(a, b) => {
            compile(a, code);
            compile(b, code);
            code.push(Instr::Add);
        }
        Ast::Sub(a, b) => {
            compile(a, code);
            compile(b, code);
            code.push(Instr::Sub);
        }
        Ast::Mul(a, b) => {
            compile(a, code);
            compile(b, code);
            code.push(Instr::Mul);
        }
        Ast::Div(a, b) => {
            compile(a, code);
            compile(b, code);
            code.push(Instr::Div);
        }
        Ast::Pow(a, b) => {
            compile(a, code);
            // constant exponent compiles to a dedicated op with exact jet rules
            if let Ast::Num(k) = **b {
                code.push(Instr::PowConst(k));
            } else if let Ast::Neg(inner) = &**b {
                if let Ast::Num(k) = **inner {
                    code.push(Instr::PowConst(-k));
                } else {
                    compile(b, code);
                    code.push(Instr::Pow);
                }
            } else {
                compile(b, code);
                code.push(Instr::Pow);
            }
        }
        Ast::Call(f, a) => {
            compile(a, code);
            code.push(Instr::Call(*f));
        }
    }
}

impl Expr {
    /// Parse `src` with the given allowed variable names. Positions in errors
    /// are 1-based and relative to (`line0`, `col0`), so a spec-file parser
    /// can report the location inside the containing file.
    pub fn parse_at(src: &str, vars: &[&str], line0: usize, col0: usize) -> Result<Expr> {
        let mut lexer = Lexer::new(src, line0, col0);
        let first = lexer.next_token()?;
        let mut parser = Parser {
            lexer,
            current: first,
            vars,
            src,
        };
        let ast = parser.expr()?;
        if parser.current.kind != TokKind::Eof {
            return Err(parser.error_at(parser.current, "trailing input after expression"));
        }
        let mut code = Vec::new();
        compile(&ast, &mut code);
        Ok(Expr {
            code,
            source: src.trim().to_string(),
            n_vars: vars.len(),
        })
    }

    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        Self::parse_at(src, vars, 1, 1)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluate at the given variable values.
    pub fn eval(&self, vars: &[f64]) -> f64 {
        debug_assert!(vars.len() >= self.n_vars);
        let mut stack = [0.0f64; 32];
        let mut top = 0usize;
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => {
                    stack[top] = v;
                    top += 1;
                }
                Instr::Var(i) => {
                    stack[top] = vars[i];
                    top += 1;
                }
                Instr::Add => {
                    top -= 1;
                    stack[top - 1] += stack[top];
                }
                Instr::Sub => {
                    top -= 1;
                    stack[top - 1] -= stack[top];
                }
                Instr::Mul => {
                    top -= 1;
                    stack[top - 1] *= stack[top];
                }
                Instr::Div => {
                    top -= 1;
                    stack[top - 1] /= stack[top];
                }
                Instr::Neg => stack[top - 1] = -stack[top - 1],
                Instr::Pow => {
                    top -= 1;
                    stack[top - 1] = powf_signed(stack[top - 1], stack[top]);
                }
                Instr::PowConst(k) => stack[top - 1] = powf_signed(stack[top - 1], k),
                Instr::Call(f) => stack[top - 1] = apply_f64(f, stack[top - 1]),
            }
        }
        debug_assert_eq!(top, 1);
        stack[0]
    }

    /// Evaluate with value, first and second derivative with respect to
    /// variable `wrt`; the other variables are held fixed.
    pub fn eval_jet(&self, vars: &[f64], wrt: usize) -> Jet2 {
        debug_assert!(vars.len() >= self.n_vars);
        let mut stack = [Jet2::constant(0.0); 32];
        let mut top = 0usize;
        for instr in &self.code {
            match *instr {
                Instr::Const(v) => {
                    stack[top] = Jet2::constant(v);
                    top += 1;
                }
                Instr::Var(i) => {
                    stack[top] = if i == wrt {
                        Jet2::variable(vars[i])
                    } else {
                        Jet2::constant(vars[i])
                    };
                    top += 1;
                }
                Instr::Add => {
                    top -= 1;
                    stack[top - 1] = stack[top - 1].add(stack[top]);
                }
                Instr::Sub => {
                    top -= 1;
                    stack[top - 1] = stack[top - 1].sub(stack[top]);
                }
                Instr::Mul => {
                    top -= 1;
                    stack[top - 1] = stack[top - 1].mul(stack[top]);
                }
                Instr::Div => {
                    top -= 1;
                    stack[top - 1] = stack[top - 1].div(stack[top]);
                }
                Instr::Neg => stack[top - 1] = stack[top - 1].neg(),
                Instr::Pow => {
                    top -= 1;
                    let e = stack[top];
                    let b = stack[top - 1];
                    // general power via exp(e * log b); requires b > 0
                    stack[top - 1] = e.mul(b.apply(Func::Log)).apply(Func::Exp);
                }
                Instr::PowConst(k) => stack[top - 1] = stack[top - 1].pow_const(k),
                Instr::Call(f) => stack[top - 1] = stack[top - 1].apply(f),
            }
        }
        debug_assert_eq!(top, 1);
        stack[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn j(src: &str, x: f64) -> Jet2 {
        Expr::parse(src, &["r"]).unwrap().eval_jet(&[x], 0)
    }

    #[test]
    fn parses_and_evaluates_basic_arithmetic() {
        let e = Expr::parse("1.5*r - 0.5*tanh(r)", &["r"]).unwrap();
        let x = 0.7;
        assert!((e.eval(&[x]) - (1.5 * x - 0.5 * x.tanh())).abs() < 1e-15);
    }

    #[test]
    fn precedence_and_unary_minus() {
        let e = Expr::parse("-r^2 + 2*r", &["r"]).unwrap();
        // -(r^2) + 2r, not (-r)^2
        assert!((e.eval(&[3.0]) - (-9.0 + 6.0)).abs() < 1e-15);
        let e = Expr::parse("2^3^2", &["r"]).unwrap();
        // right associative
        assert!((e.eval(&[0.0]) - 512.0).abs() < 1e-12);
    }

    #[test]
    fn jet_derivatives_match_closed_forms() {
        let out = j("sinh(r)", 0.8);
        assert!((out.v - 0.8f64.sinh()).abs() < 1e-15);
        assert!((out.d1 - 0.8f64.cosh()).abs() < 1e-15);
        assert!((out.d2 - 0.8f64.sinh()).abs() < 1e-15);

        let out = j("tanh(r)", 0.5);
        let t = 0.5f64.tanh();
        let s2 = 1.0 - t * t;
        assert!((out.d1 - s2).abs() < 1e-14);
        assert!((out.d2 - (-2.0 * s2 * t)).abs() < 1e-14);

        let out = j("r^3/(1+r^2)", 1.3);
        let h = 1e-5;
        let f = |x: f64| x.powi(3) / (1.0 + x * x);
        let d1_fd = (f(1.3 + h) - f(1.3 - h)) / (2.0 * h);
        let d2_fd = (f(1.3 + h) - 2.0 * f(1.3) + f(1.3 - h)) / (h * h);
        assert!((out.d1 - d1_fd).abs() < 1e-8);
        assert!((out.d2 - d2_fd).abs() < 1e-5);
    }

    #[test]
    fn jet_derivatives_match_finite_differences_for_sech_and_powers() {
        for &(src, x) in &[
            ("sech(r)", 0.9),
            ("exp(-r^2)", 0.4),
            ("log(2/(1+r^2))", 0.6),
            ("sqrt(1+r^2)", 1.1),
            ("sin(r)*cos(r)", 0.3),
            ("r^0.5", 2.0),
        ] {
            let e = Expr::parse(src, &["r"]).unwrap();
            let out = e.eval_jet(&[x], 0);
            let h = 1e-5;
            let d1_fd = (e.eval(&[x + h]) - e.eval(&[x - h])) / (2.0 * h);
            let d2_fd = (e.eval(&[x + h]) - 2.0 * e.eval(&[x]) + e.eval(&[x - h])) / (h * h);
            assert!(
                (out.d1 - d1_fd).abs() < 1e-7 * (1.0 + d1_fd.abs()),
                "{src}: d1 {} vs fd {}",
                out.d1,
                d1_fd
            );
            assert!(
                (out.d2 - d2_fd).abs() < 1e-4 * (1.0 + d2_fd.abs()),
                "{src}: d2 {} vs fd {}",
                out.d2,
                d2_fd
            );
        }
    }

    #[test]
    fn two_variable_partials() {
        let e = Expr::parse("x^2*y + exp(y)", &["x", "y"]).unwrap();
        let at = [1.2, 0.3];
        let jx = e.eval_jet(&at, 0);
        let jy = e.eval_jet(&at, 1);
        assert!((jx.d1 - 2.0 * 1.2 * 0.3).abs() < 1e-14);
        assert!((jx.d2 - 2.0 * 0.3).abs() < 1e-14);
        assert!((jy.d1 - (1.2f64 * 1.2 + 0.3f64.exp())).abs() < 1e-14);
        assert!((jy.d2 - 0.3f64.exp()).abs() < 1e-14);
    }

    #[test]
    fn error_positions_are_reported() {
        let err = Expr::parse("sinh(r) + ", &["r"]).unwrap_err();
        match err {
            Error::Parse { line, col, .. } => {
                assert_eq!(line, 1);
                assert!(col >= 10);
            }
            other => panic!("expected parse error, got {other}"),
        }
        let err = Expr::parse("cot(r)", &["r"]).unwrap_err();
        assert!(err.to_string().contains("unknown function"));
        let err = Expr::parse("q + 1", &["r"]).unwrap_err();
        assert!(err.to_string().contains("unknown identifier"));
    }

    #[test]
    fn negative_base_integer_power() {
        let e = Expr::parse("r^3", &["r"]).unwrap();
        assert!((e.eval(&[-2.0]) + 8.0).abs() < 1e-14);
        let out = e.eval_jet(&[-2.0], 0);
        assert!((out.d1 - 12.0).abs() < 1e-12);
        assert!((out.d2 + 12.0).abs() < 1e-12);
    }
}
