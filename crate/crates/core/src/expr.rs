//! Scalar coefficient expressions.
//!
//! Metric factors and nonlinearity coefficients are given in configuration
//! files as formulas in the coordinates `t, x, y` (`y` only when the cross
//! section is two dimensional), e.g. `1 + 0.2*sin(3*t)*cos(2*x)`.
//! Besides plain evaluation, an expression can be expanded into a truncated
//! Taylor polynomial about a point; the chart construction depends on those
//! jets being exact to the retained degree, so the expansion is done by
//! series arithmetic, not by finite differences.

use crate::error::{Error, Result};
use crate::poly::{
    self, series_exp, series_log, series_pow, series_sin_cos, series_tanh, MultiPoly, PolyShape,
};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Tanh,
    Log,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Num(f64),
    /// Coordinate index: 0 = t, 1 = x, 2 = y.
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    /// Integer power (possibly negative).
    PowI(Box<Expr>, i32),
    /// Real power with non-integer exponent.
    PowF(Box<Expr>, f64),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr> {
        let mut p = Parser {
            src: src.as_bytes(),
            pos: 0,
        };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.src.len() {
            return Err(p.err("trailing input"));
        }
        Ok(e)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Num(v)
    }

    /// Plain evaluation at coordinates `(t, x, y)`; `y` is ignored by
    /// expressions that never mention it.
    pub fn eval(&self, p: &[f64; 3]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => p[*i],
            Expr::Add(a, b) => a.eval(p) + b.eval(p),
            Expr::Sub(a, b) => a.eval(p) - b.eval(p),
            Expr::Mul(a, b) => a.eval(p) * b.eval(p),
            Expr::Div(a, b) => a.eval(p) / b.eval(p),
            Expr::Neg(a) => -a.eval(p),
            Expr::PowI(a, k) => a.eval(p).powi(*k),
            Expr::PowF(a, q) => a.eval(p).powf(*q),
            Expr::Call(f, a) => {
                let v = a.eval(p);
                match f {
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                    Func::Exp => v.exp(),
                    Func::Sqrt => v.sqrt(),
                    Func::Tanh => v.tanh(),
                    Func::Log => v.ln(),
                }
            }
        }
    }

    /// Truncated Taylor expansion about `center`. Variable `v` of the shape
    /// stands for the offset from `center[v]`.
    pub fn taylor(&self, center: &[f64; 3], shape: &Arc<PolyShape>) -> MultiPoly<f64> {
        let n = shape.total_cap + 1;
        match self {
            Expr::Num(v) => MultiPoly::constant(shape, *v),
            Expr::Var(i) => {
                let mut p = MultiPoly::constant(shape, center[*i]);
                if *i < shape.nvars {
                    let v = MultiPoly::var(shape, *i);
                    p = &p + &v;
                }
                p
            }
            Expr::Add(a, b) => &a.taylor(center, shape) + &b.taylor(center, shape),
            Expr::Sub(a, b) => &a.taylor(center, shape) - &b.taylor(center, shape),
            Expr::Mul(a, b) => a.taylor(center, shape).mul(&b.taylor(center, shape)),
            Expr::Div(a, b) => a
                .taylor(center, shape)
                .mul(&b.taylor(center, shape).recip()),
            Expr::Neg(a) => -&a.taylor(center, shape),
            Expr::PowI(a, k) => {
                let base = a.taylor(center, shape);
                let kk = k.unsigned_abs() as usize;
                let mut acc = MultiPoly::constant(shape, 1.0);
                let mut sq = base.clone();
                let mut rem = kk;
                while rem > 0 {
                    if rem & 1 == 1 {
                        acc = acc.mul(&sq);
                    }
                    rem >>= 1;
                    if rem > 0 {
                        sq = sq.mul(&sq);
                    }
                }
                if *k < 0 {
                    acc.recip()
                } else {
                    acc
                }
            }
            Expr::PowF(a, q) => {
                let base = a.taylor(center, shape);
                base.analytic(&series_pow(base.constant_term(), *q, n))
            }
            Expr::Call(f, a) => {
                let inner = a.taylor(center, shape);
                let c = inner.constant_term();
                match f {
                    Func::Sin => inner.analytic(&series_sin_cos(c, n).0),
                    Func::Cos => inner.analytic(&series_sin_cos(c, n).1),
                    Func::Exp => inner.analytic(&series_exp(c, n)),
                    Func::Sqrt => inner.sqrt(),
                    Func::Tanh => inner.analytic(&series_tanh(c, n)),
                    Func::Log => inner.analytic(&series_log(c, n)),
                }
            }
        }
    }

    /// First derivative along coordinate `v` at a point, by Taylor mode.
    pub fn deriv1(&self, p: &[f64; 3], v: usize) -> f64 {
        let sh = poly::shape_total(3, 1);
        let jet = self.taylor(p, &sh);
        let mut e = [0u8; poly::MAX_VARS];
        e[v] = 1;
        jet.coeff(&e)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::ExprParse {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            self.skip_ws();
            let neg = self.eat(b'-');
            let num = self.number()?;
            let signed = if neg { -num } else { num };
            if signed.fract() == 0.0 && signed.abs() < 64.0 {
                return Ok(Expr::PowI(Box::new(base), signed as i32));
            }
            return Ok(Expr::PowF(Box::new(base), signed));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => Ok(Expr::Num(self.number()?)),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let ident = self.ident();
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    let f = match ident.as_str() {
                        "sin" => Func::Sin,
                        "cos" => Func::Cos,
                        "exp" => Func::Exp,
                        "sqrt" => Func::Sqrt,
                        "tanh" => Func::Tanh,
                        "log" | "ln" => Func::Log,
                        _ => return Err(self.err(&format!("unknown function '{ident}'"))),
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.skip_ws();
                    if !self.eat(b')') {
                        return Err(self.err("expected ')'"));
                    }
                    Ok(Expr::Call(f, Box::new(arg)))
                } else {
                    match ident.as_str() {
                        "t" => Ok(Expr::Var(0)),
                        "x" => Ok(Expr::Var(1)),
                        "y" => Ok(Expr::Var(2)),
                        "pi" => Ok(Expr::Num(std::f64::consts::PI)),
                        "e" => Ok(Expr::Num(std::f64::consts::E)),
                        _ => Err(self.err(&format!("unknown identifier '{ident}'"))),
                    }
                }
            }
            _ => Err(self.err("expected a number, identifier or '('")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.src[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64> {
        let start = self.pos;
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            if c.is_ascii_digit() || c == b'.' {
                self.pos += 1;
            } else if (c == b'e' || c == b'E')
                && self.pos > start
                && self
                    .src
                    .get(self.pos + 1)
                    .is_some_and(|&d| d.is_ascii_digit() || d == b'+' || d == b'-')
            {
                self.pos += 2;
            } else {
                break;
            }
        }
        if self.pos == start {
            return Err(self.err("expected a number"));
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err("malformed number"))
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(0) => write!(f, "t"),
            Expr::Var(1) => write!(f, "x"),
            Expr::Var(_) => write!(f, "y"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::PowI(a, k) => write!(f, "({a}^{k})"),
            Expr::PowF(a, q) => write!(f, "({a}^{q})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                    Func::Exp => "exp",
                    Func::Sqrt => "sqrt",
                    Func::Tanh => "tanh",
                    Func::Log => "log",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}
