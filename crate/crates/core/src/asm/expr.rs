//! Constant expressions: integers, character literals, symbols, `.`, and
//! the operators `| ^ & << >> + - *` with C precedence, plus unary `-`/`~`
//! and the relocation helpers `%hi(..)`/`%lo(..)`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Num(i64),
    Sym(String),
    Here,
    Neg(Box<Expr>),
    Not(Box<Expr>),
    Hi(Box<Expr>),
    Lo(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Or,
    Xor,
    And,
    Shl,
    Shr,
    Add,
    Sub,
    Mul,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::Xor => 2,
            BinOp::And => 3,
            BinOp::Shl | BinOp::Shr => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    Unresolved(String),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::Unresolved(s) => write!(f, "undefined symbol `{s}`"),
        }
    }
}

pub fn is_symbol_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_' || c == '.' || c == '$'
}

pub fn is_symbol_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '$'
}

/// `%hi` field: the upper 20 bits, rounded so `%lo` can be added signed.
pub fn hi20(value: i64) -> i64 {
    (value.wrapping_add(0x800) >> 12) & 0xF_FFFF
}

/// `%lo` field: the low 12 bits, sign-extended.
pub fn lo12(value: i64) -> i64 {
    (value << 52) >> 52
}

impl Expr {
    pub fn eval(&self, here: u64, lookup: &dyn Fn(&str) -> Option<i64>) -> Result<i64, EvalError> {
        Ok(match self {
            Expr::Num(n) => *n,
            Expr::Sym(s) => lookup(s).ok_or_else(|| EvalError::Unresolved(s.clone()))?,
            Expr::Here => here as i64,
            Expr::Neg(e) => e.eval(here, lookup)?.wrapping_neg(),
            Expr::Not(e) => !e.eval(here, lookup)?,
            Expr::Hi(e) => hi20(e.eval(here, lookup)?),
            Expr::Lo(e) => lo12(e.eval(here, lookup)?),
            Expr::Bin(op, a, b) => {
                let a = a.eval(here, lookup)?;
                let b = b.eval(here, lookup)?;
                match op {
                    BinOp::Or => a | b,
                    BinOp::Xor => a ^ b,
                    BinOp::And => a & b,
                    BinOp::Shl => a.wrapping_shl(b as u32),
                    BinOp::Shr => ((a as u64).wrapping_shr(b as u32)) as i64,
                    BinOp::Add => a.wrapping_add(b),
                    BinOp::Sub => a.wrapping_sub(b),
                    BinOp::Mul => a.wrapping_mul(b),
                }
            }
        })
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            false
        }
    }

    fn peek_op(&mut self) -> Option<(BinOp, usize)> {
        self.skip_ws();
        let r = self.rest();
        let ops: [(&str, BinOp); 8] = [
            ("<<", BinOp::Shl),
            (">>", BinOp::Shr),
            ("|", BinOp::Or),
            ("^", BinOp::Xor),
            ("&", BinOp::And),
            ("+", BinOp::Add),
            ("-", BinOp::Sub),
            ("*", BinOp::Mul),
        ];
        ops.iter()
            .find(|(t, _)| r.starts_with(t))
            .map(|(t, op)| (*op, t.len()))
    }

    fn binary(&mut self, min_prec: u8) -> Result<Expr, String> {
        let mut lhs = self.unary()?;
        while let Some((op, len)) = self.peek_op() {
            if op.precedence() < min_prec {
                break;
            }
            self.pos += len;
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, String> {
        if self.eat("-") {
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        if self.eat("~") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        if self.eat("+") {
            return self.unary();
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, String> {
        self.skip_ws();
        for (name, wrap) in [
            ("%hi(", Expr::Hi as fn(Box<Expr>) -> Expr),
            ("%lo(", Expr::Lo),
        ] {
            if self.eat(name) {
                let inner = self.binary(0)?;
                if !self.eat(")") {
                    return Err(format!("missing `)` after {name}"));
                }
                return Ok(wrap(Box::new(inner)));
            }
        }
        if self.eat("(") {
            let inner = self.binary(0)?;
            if !self.eat(")") {
                return Err("missing `)`".into());
            }
            return Ok(inner);
        }
        let r = self.rest();
        let Some(c) = r.chars().next() else {
            return Err("expected an expression".into());
        };
        if c == '\'' {
            let (value, len) = parse_char_literal(r)?;
            self.pos += len;
            return Ok(Expr::Num(value));
        }
        if c.is_ascii_digit() {
            let len = r
                .find(|c: char| !c.is_ascii_alphanumeric() && c != '_')
                .unwrap_or(r.len());
            let text = &r[..len];
            self.pos += len;
            return parse_int(text).map(Expr::Num);
        }
        if is_symbol_start(c) {
            let len = r.find(|c: char| !is_symbol_char(c)).unwrap_or(r.len());
            let name = &r[..len];
            self.pos += len;
            return Ok(if name == "." {
                Expr::Here
            } else {
                Expr::Sym(name.to_owned())
            });
        }
        Err(format!("unexpected `{c}` in expression"))
    }
}

pub fn parse_int(text: &str) -> Result<i64, String> {
    let clean = text.replace('_', "");
    let (digits, radix) = if let Some(h) = clean.strip_prefix("0x").or(clean.strip_prefix("0X")) {
        (h, 16)
    } else if let Some(b) = clean.strip_prefix("0b").or(clean.strip_prefix("0B")) {
        (b, 2)
    } else {
        (clean.as_str(), 10)
    };
    u64::from_str_radix(digits, radix)
        .map(|v| v as i64)
        .map_err(|_| format!("invalid number `{text}`"))
}

fn parse_char_literal(r: &str) -> Result<(i64, usize), String> {
    let body = &r[1..];
    let (bytes, used) = unescape_one(body).ok_or("bad character literal")?;
    if !body[used..].starts_with('\'') {
        return Err("unterminated character literal".into());
    }
    Ok((i64::from(bytes), used + 2))
}

/// Decodes one possibly-escaped character; returns the byte and the number of
/// source bytes consumed.
pub fn unescape_one(s: &str) -> Option<(u8, usize)> {
    let mut chars = s.chars();
    let c = chars.next()?;
    if c != '\\' {
        return c.is_ascii().then_some((c as u8, 1));
    }
    let e = chars.next()?;
    Some(match e {
        'n' => (b'\n', 2),
        't' => (b'\t', 2),
        'r' => (b'\r', 2),
        '0' => (0, 2),
        '\\' => (b'\\', 2),
        '\'' => (b'\'', 2),
        '"' => (b'"', 2),
        'x' => {
            let hex = s.get(2..4)?;
            (u8::from_str_radix(hex, 16).ok()?, 4)
        }
        _ => return None,
    })
}

pub fn parse_expr(src: &str) -> Result<Expr, String> {
    let mut p = Parser { src, pos: 0 };
    let e = p.binary(0)?;
    p.skip_ws();
    if !p.rest().is_empty() {
        return Err(format!("unexpected `{}` after expression", p.rest()));
    }
    Ok(e)
}
