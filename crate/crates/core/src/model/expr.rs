//! Arithmetic expressions over the variables `y1..yn, u1..up`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```txt
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          right associative
//! atom   := number | variable | func '(' expr ')' | '(' expr ')'
//! func   := sin | cos | exp | log
//! ```
//!
//! Evaluation comes in two flavours: plain values, and values together with
//! the exact gradient with respect to all variables (forward-mode dual
//! numbers), which backs the Jacobians of problems loaded from JSON.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// Index into the stacked variable vector `(y, u)`.
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '+' | '-' | '*' | '/' | '^' => {
                out.push(Token::Op(c));
                i += 1;
            }
            // Unicode minus is accepted so documents may be typeset.
            '\u{2212}' => {
                out.push(Token::Op('-'));
                i += 1;
            }
            '(' => {
                out.push(Token::LParen);
                i += 1;
            }
            ')' => {
                out.push(Token::RParen);
                i += 1;
            }
            c if c.is_ascii_digit() || c == '.' => {
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
                let text: String = chars[start..i].iter().collect();
                let value = text
                    .parse::<f64>()
                    .map_err(|_| Error::Parse(format!("bad numeric literal '{text}'")))?;
                out.push(Token::Num(value));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Parse(format!("unexpected character '{other}'"))),
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    state_dim: usize,
    control_dim: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn err(&self, msg: &str) -> Error {
        Error::Parse(format!("{msg} in '{}'", self.src))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ ('+' | '-'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Some(Token::Op(op @ ('*' | '/'))) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let Some(Token::Op('-')) = self.peek() {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if let Some(Token::Op('+')) = self.peek() {
            self.pos += 1;
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if let Some(Token::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Pow(Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.next() {
            Some(Token::Num(v)) => Ok(Expr::Num(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                match self.next() {
                    Some(Token::RParen) => Ok(e),
                    _ => Err(self.err("missing ')'")),
                }
            }
            Some(Token::Ident(name)) => {
                let func = match name.as_str() {
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    "exp" => Some(Func::Exp),
                    "log" => Some(Func::Log),
                    _ => None,
                };
                if let Some(func) = func {
                    match self.next() {
                        Some(Token::LParen) => {}
                        _ => return Err(self.err("expected '(' after function name")),
                    }
                    let arg = self.expr()?;
                    match self.next() {
                        Some(Token::RParen) => {}
                        _ => return Err(self.err("missing ')'")),
                    }
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                self.variable(&name)
            }
            _ => Err(self.err("unexpected end of expression or token")),
        }
    }

    fn variable(&self, name: &str) -> Result<Expr> {
        let (kind, digits) = name.split_at(1);
        let index: usize = digits
            .parse()
            .map_err(|_| self.err(&format!("unknown identifier '{name}'")))?;
        match kind {
            "y" if (1..=self.state_dim).contains(&index) => Ok(Expr::Var(index - 1)),
            "u" if (1..=self.control_dim).contains(&index) => {
                Ok(Expr::Var(self.state_dim + index - 1))
            }
            _ => Err(self.err(&format!("unknown identifier '{name}'"))),
        }
    }
}

impl Expr {
    /// Parses `src` with variables `y1..y{state_dim}` and `u1..u{control_dim}`.
    pub fn parse(src: &str, state_dim: usize, control_dim: usize) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            state_dim,
            control_dim,
            src,
        };
        let e = parser.expr()?;
        if parser.pos != parser.tokens.len() {
            return Err(parser.err("trailing input"));
        }
        Ok(e)
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(i) => vars[*i],
            Expr::Neg(a) => -a.eval(vars),
            Expr::Add(a, b) => a.eval(vars) + b.eval(vars),
            Expr::Sub(a, b) => a.eval(vars) - b.eval(vars),
            Expr::Mul(a, b) => a.eval(vars) * b.eval(vars),
            Expr::Div(a, b) => a.eval(vars) / b.eval(vars),
            Expr::Pow(a, b) => pow(a.eval(vars), b.eval(vars)),
            Expr::Call(f, a) => {
                let x = a.eval(vars);
                match f {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => x.ln(),
                }
            }
        }
    }

    /// Value and gradient with respect to every variable in `vars`.
    pub fn eval_grad(&self, vars: &[f64]) -> (f64, Vec<f64>) {
        let d = self.dual(vars);
        (d.v, d.g)
    }

    fn dual(&self, vars: &[f64]) -> Dual {
        let dim = vars.len();
        match self {
            Expr::Num(v) => Dual::constant(*v, dim),
            Expr::Var(i) => {
                let mut g = vec![0.0; dim];
                g[*i] = 1.0;
                Dual { v: vars[*i], g }
            }
            Expr::Neg(a) => a.dual(vars).scale(-1.0),
            Expr::Add(a, b) => a.dual(vars).combine(&b.dual(vars), 1.0, 1.0, |x, y| x + y),
            Expr::Sub(a, b) => a.dual(vars).combine(&b.dual(vars), 1.0, -1.0, |x, y| x - y),
            Expr::Mul(a, b) => {
                let (da, db) = (a.dual(vars), b.dual(vars));
                let (va, vb) = (da.v, db.v);
                da.combine(&db, vb, va, |x, y| x * y)
            }
            Expr::Div(a, b) => {
                let (da, db) = (a.dual(vars), b.dual(vars));
                let (va, vb) = (da.v, db.v);
                da.combine(&db, 1.0 / vb, -va / (vb * vb), |x, y| x / y)
            }
            Expr::Pow(a, b) => {
                let (da, db) = (a.dual(vars), b.dual(vars));
                let (va, vb) = (da.v, db.v);
                let value = pow(va, vb);
                // d(a^b) = b a^(b-1) da + a^b ln(a) db; the second term only
                // when the exponent actually varies.
                let wa = if vb == 0.0 { 0.0 } else { vb * pow(va, vb - 1.0) };
                let exponent_varies = db.g.iter().any(|&x| x != 0.0);
                let wb = if exponent_varies { value * va.ln() } else { 0.0 };
                let mut out = da.combine(&db, wa, wb, |_, _| 0.0);
                out.v = value;
                out
            }
            Expr::Call(f, a) => {
                let da = a.dual(vars);
                let x = da.v;
                let (value, slope) = match f {
                    Func::Sin => (x.sin(), x.cos()),
                    Func::Cos => (x.cos(), -x.sin()),
                    Func::Exp => (x.exp(), x.exp()),
                    Func::Log => (x.ln(), 1.0 / x),
                };
                let mut out = da.scale(slope);
                out.v = value;
                out
            }
        }
    }
}

/// Integer exponents go through `powi` so negative bases work.
fn pow(base: f64, exponent: f64) -> f64 {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        base.powi(exponent as i32)
    } else {
        base.powf(exponent)
    }
}

struct Dual {
    v: f64,
    g: Vec<f64>,
}

impl Dual {
    fn constant(v: f64, dim: usize) -> Self {
        Dual {
            v,
            g: vec![0.0; dim],
        }
    }

    fn scale(mut self, s: f64) -> Self {
        self.v *= s;
        for x in &mut self.g {
            *x *= s;
        }
        self
    }

    fn combine(&self, other: &Dual, wa: f64, wb: f64, value: impl Fn(f64, f64) -> f64) -> Dual {
        let g = self
            .g
            .iter()
            .zip(&other.g)
            .map(|(a, b)| wa * a + wb * b)
            .collect();
        Dual {
            v: value(self.v, other.v),
            g,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: &[f64]) -> f64 {
        Expr::parse(src, 2, 1).unwrap().eval(vars)
    }

    #[test]
    fn precedence_and_associativity() {
        let v = [2.0, 3.0, 0.5];
        assert_eq!(ev("1 + 2 * 3", &v), 7.0);
        assert_eq!(ev("-y1^2", &v), -4.0);
        assert_eq!(ev("2^3^2", &v), 512.0);
        assert_eq!(ev("(y1 - 1)^2 + u1^2", &v), 1.25);
        assert_eq!(ev("y2 / y1 / 2", &v), 0.75);
        assert_eq!(ev("-y1^3 + u1", &v), -7.5);
        assert_eq!(ev("1e-1 * 10", &v), 1.0);
    }

    #[test]
    fn functions() {
        let v = [0.0, 1.0, 0.0];
        assert_eq!(ev("sin(y1) + cos(y1)", &v), 1.0);
        assert_eq!(ev("exp(y1) * log(y2)", &v), 0.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Expr::parse("y3", 2, 1).is_err());
        assert!(Expr::parse("u2", 2, 1).is_err());
        assert!(Expr::parse("(y1 + 1", 2, 1).is_err());
        assert!(Expr::parse("y1 +", 2, 1).is_err());
        assert!(Expr::parse("tan(y1)", 2, 1).is_err());
        assert!(Expr::parse("y1 y2", 2, 1).is_err());
    }

    #[test]
    fn gradient_matches_hand_derivatives() {
        let e = Expr::parse("sin(y1) * y2^2 - exp(u1) / y2", 2, 1).unwrap();
        let v = [0.3, 1.7, -0.4];
        let (value, g) = e.eval_grad(&v);
        assert!((value - e.eval(&v)).abs() < 1e-15);
        let expected = [
            v[0].cos() * v[1] * v[1],
            2.0 * v[0].sin() * v[1] + v[2].exp() / (v[1] * v[1]),
            -v[2].exp() / v[1],
        ];
        for (a, b) in g.iter().zip(expected) {
            assert!((a - b).abs() < 1e-14, "{a} vs {b}");
        }
    }

    #[test]
    fn gradient_of_variable_exponent() {
        let e = Expr::parse("y1^y2", 2, 1).unwrap();
        let (_, g) = e.eval_grad(&[2.0, 3.0, 0.0]);
        assert!((g[0] - 12.0).abs() < 1e-12);
        assert!((g[1] - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
