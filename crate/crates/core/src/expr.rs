//! Closed-form scalar expressions in `(t, x1, x2, x3)`.
//!
//! Used for material laws, data and charts. Supports parsing, symbolic
//! differentiation, substitution and evaluation over any [`Real`].

use std::fmt;
use std::sync::Arc;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Independent variables, in evaluation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    T = 0,
    X1 = 1,
    X2 = 2,
    X3 = 3,
}

impl Var {
    pub const SPACE: [Var; 3] = [Var::X1, Var::X2, Var::X3];

    pub fn space(axis: usize) -> Var {
        Self::SPACE[axis]
    }

    fn name(self) -> &'static str {
        match self {
            Var::T => "t",
            Var::X1 => "x1",
            Var::X2 => "x2",
            Var::X3 => "x3",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    /// `exp(-1/x)` for `x > 0`, else `0`.
    Psi,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
            Func::Sqrt => "sqrt",
            Func::Psi => "psi",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(f64),
    Var(Var),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Neg(Expr),
    /// Integer power.
    Powi(Expr, i32),
    /// General power `a^b`.
    Pow(Expr, Expr),
    Call(Func, Expr),
}

/// Immutable, cheaply clonable expression tree.
#[derive(Clone, Debug, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    fn node(n: Node) -> Self {
        Expr(Arc::new(n))
    }

    pub fn constant(v: f64) -> Self {
        Self::node(Node::Const(v))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn var(v: Var) -> Self {
        Self::node(Node::Var(v))
    }

    pub fn t() -> Self {
        Self::var(Var::T)
    }

    pub fn x(axis: usize) -> Self {
        Self::var(Var::space(axis))
    }

    pub fn as_const(&self) -> Option<f64> {
        match *self.0 {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn add(&self, o: &Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a + b),
            (Some(a), _) if a == 0.0 => o.clone(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Self::node(Node::Add(self.clone(), o.clone())),
        }
    }

    pub fn sub(&self, o: &Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a - b),
            (Some(a), _) if a == 0.0 => o.neg(),
            (_, Some(b)) if b == 0.0 => self.clone(),
            _ => Self::node(Node::Sub(self.clone(), o.clone())),
        }
    }

    pub fn mul(&self, o: &Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a * b),
            (Some(a), _) | (_, Some(a)) if a == 0.0 => Expr::zero(),
            (Some(a), _) if a == 1.0 => o.clone(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            _ => Self::node(Node::Mul(self.clone(), o.clone())),
        }
    }

    pub fn div(&self, o: &Expr) -> Expr {
        match (self.as_const(), o.as_const()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::constant(a / b),
            (Some(a), _) if a == 0.0 => Expr::zero(),
            (_, Some(b)) if b == 1.0 => self.clone(),
            _ => Self::node(Node::Div(self.clone(), o.clone())),
        }
    }

    pub fn neg(&self) -> Expr {
        match &*self.0 {
            Node::Const(c) => Expr::constant(-c),
            Node::Neg(inner) => inner.clone(),
            _ => Self::node(Node::Neg(self.clone())),
        }
    }

    pub fn powi(&self, n: i32) -> Expr {
        match (self.as_const(), n) {
            (_, 0) => Expr::one(),
            (_, 1) => self.clone(),
            (Some(c), _) => Expr::constant(c.powi(n)),
            _ => Self::node(Node::Powi(self.clone(), n)),
        }
    }

    pub fn pow(&self, e: &Expr) -> Expr {
        if let Some(c) = e.as_const() {
            if c.fract() == 0.0 && c.abs() < 64.0 {
                return self.powi(c as i32);
            }
        }
        match (self.as_const(), e.as_const()) {
            (Some(a), Some(b)) => Expr::constant(a.powf(b)),
            _ => Self::node(Node::Pow(self.clone(), e.clone())),
        }
    }

    pub fn call(f: Func, a: &Expr) -> Expr {
        if let Some(c) = a.as_const() {
            let v = match f {
                Func::Sin => c.sin(),
                Func::Cos => c.cos(),
                Func::Exp => c.exp(),
                Func::Ln => c.ln(),
                Func::Sqrt => c.sqrt(),
                Func::Psi => psi(c),
            };
            if v.is_finite() {
                return Expr::constant(v);
            }
        }
        Self::node(Node::Call(f, a.clone()))
    }

    pub fn sin(&self) -> Expr {
        Self::call(Func::Sin, self)
    }
    pub fn cos(&self) -> Expr {
        Self::call(Func::Cos, self)
    }
    pub fn exp(&self) -> Expr {
        Self::call(Func::Exp, self)
    }
    pub fn ln(&self) -> Expr {
        Self::call(Func::Ln, self)
    }
    pub fn sqrt(&self) -> Expr {
        Self::call(Func::Sqrt, self)
    }
    pub fn psi(&self) -> Expr {
        Self::call(Func::Psi, self)
    }

    /// Smooth step: 0 for `s <= 0`, 1 for `s >= 1`, C^∞ in between.
    pub fn smoothstep(s: &Expr) -> Expr {
        let a = s.psi();
        let b = Expr::one().sub(s).psi();
        a.div(&a.add(&b))
    }

    /// Cutoff equal to 1 on `x <= a` and 0 on `x >= b`.
    pub fn cutoff(x: &Expr, a: f64, b: f64) -> Expr {
        let s = Expr::constant(b).sub(x).div(&Expr::constant(b - a));
        Self::smoothstep(&s)
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match &*self.0 {
            Node::Const(_) => false,
            Node::Var(w) => *w == v,
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
            Node::Neg(a) | Node::Powi(a, _) | Node::Call(_, a) => a.depends_on(v),
        }
    }

    pub fn diff(&self, v: Var) -> Expr {
        if !self.depends_on(v) {
            return Expr::zero();
        }
        match &*self.0 {
            Node::Const(_) => Expr::zero(),
            Node::Var(w) => {
                if *w == v {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Add(a, b) => a.diff(v).add(&b.diff(v)),
            Node::Sub(a, b) => a.diff(v).sub(&b.diff(v)),
            // order kept as (a', b) + (a, b') so a vanishing first factor short-circuits
            Node::Mul(a, b) => a.diff(v).mul(b).add(&a.mul(&b.diff(v))),
            Node::Div(a, b) => {
                let num = a.diff(v).mul(b).sub(&a.mul(&b.diff(v)));
                num.div(&b.powi(2))
            }
            Node::Neg(a) => a.diff(v).neg(),
            Node::Powi(a, n) => Expr::constant(*n as f64)
                .mul(&a.powi(n - 1))
                .mul(&a.diff(v)),
            Node::Pow(a, b) => {
                // d(a^b) = a^b (b' ln a + b a'/a)
                let lhs = b.diff(v).mul(&a.ln());
                let rhs = b.mul(&a.diff(v)).div(a);
                self.mul(&lhs.add(&rhs))
            }
            Node::Call(f, a) => {
                let da = a.diff(v);
                let outer = match f {
                    Func::Sin => a.cos(),
                    Func::Cos => a.sin().neg(),
                    Func::Exp => a.exp(),
                    Func::Ln => Expr::one().div(a),
                    Func::Sqrt => Expr::constant(0.5).div(&a.sqrt()),
                    Func::Psi => a.psi().mul(&a.powi(-2)),
                };
                outer.mul(&da)
            }
        }
    }

    pub fn diff_n(&self, v: Var, n: usize) -> Expr {
        let mut e = self.clone();
        for _ in 0..n {
            e = e.diff(v);
        }
        e
    }

    /// Replace variable `v` by `by`.
    pub fn subst(&self, v: Var, by: &Expr) -> Expr {
        if !self.depends_on(v) {
            return self.clone();
        }
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(w) => {
                if *w == v {
                    by.clone()
                } else {
                    self.clone()
                }
            }
            Node::Add(a, b) => a.subst(v, by).add(&b.subst(v, by)),
            Node::Sub(a, b) => a.subst(v, by).sub(&b.subst(v, by)),
            Node::Mul(a, b) => a.subst(v, by).mul(&b.subst(v, by)),
            Node::Div(a, b) => a.subst(v, by).div(&b.subst(v, by)),
            Node::Neg(a) => a.subst(v, by).neg(),
            Node::Powi(a, n) => a.subst(v, by).powi(*n),
            Node::Pow(a, b) => a.subst(v, by).pow(&b.subst(v, by)),
            Node::Call(f, a) => Expr::call(*f, &a.subst(v, by)),
        }
    }

    /// Simultaneous substitution of all three space variables.
    pub fn compose_space(&self, map: &[Expr; 3]) -> Expr {
        match &*self.0 {
            Node::Const(_) => self.clone(),
            Node::Var(Var::T) => self.clone(),
            Node::Var(w) => map[*w as usize - 1].clone(),
            Node::Add(a, b) => a.compose_space(map).add(&b.compose_space(map)),
            Node::Sub(a, b) => a.compose_space(map).sub(&b.compose_space(map)),
            Node::Mul(a, b) => a.compose_space(map).mul(&b.compose_space(map)),
            Node::Div(a, b) => a.compose_space(map).div(&b.compose_space(map)),
            Node::Neg(a) => a.compose_space(map).neg(),
            Node::Powi(a, n) => a.compose_space(map).powi(*n),
            Node::Pow(a, b) => a.compose_space(map).pow(&b.compose_space(map)),
            Node::Call(f, a) => Expr::call(*f, &a.compose_space(map)),
        }
    }

    /// Evaluate at `(t, x1, x2, x3)`.
    pub fn eval<T: Real>(&self, at: &[T; 4]) -> T {
        match &*self.0 {
            Node::Const(c) => T::lit(*c),
            Node::Var(v) => at[*v as usize],
            Node::Add(a, b) => a.eval(at) + b.eval(at),
            Node::Sub(a, b) => a.eval(at) - b.eval(at),
            Node::Mul(a, b) => {
                let va = a.eval(at);
                if va == T::zero() {
                    T::zero()
                } else {
                    va * b.eval(at)
                }
            }
            Node::Div(a, b) => {
                let va = a.eval(at);
                if va == T::zero() {
                    T::zero()
                } else {
                    va / b.eval(at)
                }
            }
            Node::Neg(a) => -a.eval(at),
            Node::Powi(a, n) => Float::powi(a.eval(at), *n),
            Node::Pow(a, b) => Float::powf(a.eval(at), b.eval(at)),
            Node::Call(f, a) => {
                let x = a.eval(at);
                match f {
                    Func::Sin => Float::sin(x),
                    Func::Cos => Float::cos(x),
                    Func::Exp => Float::exp(x),
                    Func::Ln => Float::ln(x),
                    Func::Sqrt => Float::sqrt(x),
                    Func::Psi => {
                        if x > T::zero() {
                            Float::exp(-T::one() / x)
                        } else {
                            T::zero()
                        }
                    }
                }
            }
        }
    }

    pub fn eval_f64(&self, t: f64, x: [f64; 3]) -> f64 {
        self.eval(&[t, x[0], x[1], x[2]])
    }

    pub fn parse(src: &str) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser { tokens, pos: 0 };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expr(format!("trailing input in `{src}`")));
        }
        Ok(e)
    }
}

fn psi(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / x).exp()
    } else {
        0.0
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.0 {
            Node::Const(c) => {
                if *c < 0.0 {
                    write!(f, "({c:?})")
                } else {
                    write!(f, "{c:?}")
                }
            }
            Node::Var(v) => write!(f, "{}", v.name()),
            Node::Add(a, b) => write!(f, "({a} + {b})"),
            Node::Sub(a, b) => write!(f, "({a} - {b})"),
            Node::Mul(a, b) => write!(f, "({a} * {b})"),
            Node::Div(a, b) => write!(f, "({a} / {b})"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Powi(a, n) => write!(f, "({a}^{n})"),
            Node::Pow(a, b) => write!(f, "({a}^{b})"),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
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
            let s: String = chars[start..i].iter().collect();
            let v = s
                .parse::<f64>()
                .map_err(|_| Error::Expr(format!("bad number `{s}`")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^(),".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Expr(format!("unexpected character `{c}`")));
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(Error::Expr(format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = lhs.add(&self.term()?);
            } else if self.eat('-') {
                lhs = lhs.sub(&self.term()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = lhs.mul(&self.unary()?);
            } else if self.eat('/') {
                lhs = lhs.div(&self.unary()?);
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(self.unary()?.neg());
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.eat('^') {
            let e = self.unary()?;
            return Ok(base.pow(&e));
        }
        Ok(base)
    }

    fn args(&mut self) -> Result<Vec<Expr>> {
        self.expect('(')?;
        let mut out = vec![self.expr()?];
        while self.eat(',') {
            out.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(out)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::constant(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                let var = match name.as_str() {
                    "t" => Some(Var::T),
                    "x1" | "x" => Some(Var::X1),
                    "x2" | "y" => Some(Var::X2),
                    "x3" | "z" => Some(Var::X3),
                    _ => None,
                };
                if let Some(v) = var {
                    return Ok(Expr::var(v));
                }
                if name == "pi" {
                    return Ok(Expr::constant(std::f64::consts::PI));
                }
                let args = self.args()?;
                let one = |args: &[Expr]| -> Result<Expr> {
                    if args.len() == 1 {
                        Ok(args[0].clone())
                    } else {
                        Err(Error::Expr(format!("`{name}` takes one argument")))
                    }
                };
                match name.as_str() {
                    "sin" => Ok(one(&args)?.sin()),
                    "cos" => Ok(one(&args)?.cos()),
                    "exp" => Ok(one(&args)?.exp()),
                    "ln" | "log" => Ok(one(&args)?.ln()),
                    "sqrt" => Ok(one(&args)?.sqrt()),
                    "psi" => Ok(one(&args)?.psi()),
                    "smoothstep" => Ok(Expr::smoothstep(&one(&args)?)),
                    "pow" if args.len() == 2 => Ok(args[0].pow(&args[1])),
                    _ => Err(Error::Expr(format!("unknown function `{name}`"))),
                }
            }
            other => Err(Error::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(e: &Expr, t: f64, x: [f64; 3]) -> f64 {
        e.eval_f64(t, x)
    }

    #[test]
    fn parse_and_eval() {
        let e = Expr::parse("2*sin(pi*x1) + x3^2 - exp(-t)/4").unwrap();
        let v = ev(&e, 1.0, [0.25, 0.0, 3.0]);
        let expect = 2.0 * (std::f64::consts::PI * 0.25).sin() + 9.0 - (-1.0f64).exp() / 4.0;
        assert!((v - expect).abs() < 1e-14);
        assert!(Expr::parse("sin(").is_err());
        assert!(Expr::parse("foo(1)").is_err());
        assert!(Expr::parse("1 2").is_err());
    }

    #[test]
    fn unary_minus_binds_looser_than_power() {
        let e = Expr::parse("-x^2").unwrap();
        assert_eq!(ev(&e, 0.0, [3.0, 0.0, 0.0]), -9.0);
        let e = Expr::parse("2^-1").unwrap();
        assert_eq!(e.as_const(), Some(0.5));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let e = Expr::parse("sin(x1*x2) * exp(t) / (2 + cos(x3)) + sqrt(1 + x1^2) + x2^1.5").unwrap();
        let at = [0.3, 0.7, 1.1, -0.4];
        let h = 1e-6;
        for v in [Var::T, Var::X1, Var::X2, Var::X3] {
            let d = e.diff(v).eval(&at);
            let mut p = at;
            let mut m = at;
            p[v as usize] += h;
            m[v as usize] -= h;
            let fd = (e.eval(&p) - e.eval(&m)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-7, "{v:?}: {d} vs {fd}");
        }
    }

    #[test]
    fn psi_and_smoothstep() {
        let s = Expr::smoothstep(&Expr::x(0));
        assert_eq!(ev(&s, 0.0, [-0.5, 0.0, 0.0]), 0.0);
        assert_eq!(ev(&s, 0.0, [1.5, 0.0, 0.0]), 1.0);
        assert!((ev(&s, 0.0, [0.5, 0.0, 0.0]) - 0.5).abs() < 1e-15);
        // all derivatives vanish outside (0, 1) and stay finite
        let mut d = s.clone();
        for _ in 0..3 {
            d = d.diff(Var::X1);
            assert_eq!(ev(&d, 0.0, [-0.1, 0.0, 0.0]), 0.0);
            assert_eq!(ev(&d, 0.0, [0.0, 0.0, 0.0]), 0.0);
            assert!(ev(&d, 0.0, [0.3, 0.0, 0.0]).is_finite());
        }
    }

    #[test]
    fn cutoff_is_flat_near_wall() {
        let c = Expr::cutoff(&Expr::x(2), 0.25, 0.5);
        for z in [0.0, 0.1, 0.25] {
            assert_eq!(ev(&c, 0.0, [0.0, 0.0, z]), 1.0);
            assert_eq!(ev(&c.diff(Var::X3), 0.0, [0.0, 0.0, z]), 0.0);
        }
        assert_eq!(ev(&c, 0.0, [0.0, 0.0, 0.6]), 0.0);
    }

    #[test]
    fn substitution_and_composition() {
        let e = Expr::parse("x1 * x2 + t").unwrap();
        let s = e.subst(Var::X1, &Expr::parse("x3 + 1").unwrap());
        assert_eq!(ev(&s, 1.0, [10.0, 2.0, 3.0]), 9.0);
        let map = [Expr::x(1), Expr::x(0), Expr::x(2)];
        let c = e.compose_space(&map);
        assert_eq!(ev(&c, 0.0, [2.0, 5.0, 0.0]), 10.0);
        assert!(!e.depends_on(Var::X3));
    }

    #[test]
    fn display_roundtrips_through_parser() {
        let e = Expr::parse("sin(2*x1) - 3*x3^2/(1 + t)").unwrap();
        let back = Expr::parse(&e.to_string()).unwrap();
        let at = [0.2, 0.4, 0.1, 0.9];
        assert!((e.eval(&at) - back.eval(&at)).abs() < 1e-15);
    }

    #[test]
    fn generic_over_f32() {
        let e = Expr::parse("x1^2 + 1").unwrap();
        let v: f32 = e.eval(&[0.0f32, 2.0, 0.0, 0.0]);
        assert_eq!(v, 5.0);
    }
}
