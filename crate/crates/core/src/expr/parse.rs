//! Infix expression syntax used by scenario files.
//!
//! ```text
//! expr    := term (("+" | "-") term)*
//! term    := unary (("*" | "/") unary)*
//! unary   := "-" unary | power
//! power   := primary ("^" ["-"] INTEGER)?
//! primary := NUMBER | "pi" | VAR | FUNC "(" expr ")" | "(" expr ")"
//! VAR     := "y" INTEGER            (one-based: y1 .. yM)
//! FUNC    := "sin" | "cos" | "exp" | "sinc"
//! ```
//!
//! A minus sign directly in front of a number literal (and not followed by
//! `^`) is folded into a negative constant, so printing and re-parsing a
//! tree reproduces it node for node.

use super::{Expr, Node};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>> {
    let mut lx = Lexer { src: src.as_bytes(), pos: 0 };
    let mut out = Vec::new();
    while let Some(t) = lx.next_token()? {
        out.push(t);
    }
    Ok(out)
}

impl Lexer<'_> {
    fn next_token(&mut self) -> Result<Option<(usize, Tok)>> {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= self.src.len() {
            return Ok(None);
        }
        let start = self.pos;
        let c = self.src[self.pos];
        if c.is_ascii_digit() || c == b'.' {
            while self.pos < self.src.len() && (self.src[self.pos].is_ascii_digit() || self.src[self.pos] == b'.') {
                self.pos += 1;
            }
            if self.pos < self.src.len() && (self.src[self.pos] == b'e' || self.src[self.pos] == b'E') {
                let save = self.pos;
                self.pos += 1;
                if self.pos < self.src.len() && (self.src[self.pos] == b'+' || self.src[self.pos] == b'-') {
                    self.pos += 1;
                }
                let digits = self.pos;
                while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
                if self.pos == digits {
                    self.pos = save;
                }
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            let v: f64 = text.parse().map_err(|_| Error::Parse { pos: start, msg: format!("bad number '{text}'") })?;
            return Ok(Some((start, Tok::Num(v))));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
            return Ok(Some((start, Tok::Ident(text.to_string()))));
        }
        if b"+-*/^()".contains(&c) {
            self.pos += 1;
            return Ok(Some((start, Tok::Op(c as char))));
        }
        Err(Error::Parse { pos: start, msg: format!("unexpected character '{}'", c as char) })
    }
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    i: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.i).map(|t| &t.1)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.i + k).map(|t| &t.1)
    }

    fn pos(&self) -> usize {
        self.toks.get(self.i).map_or(self.end, |t| t.0)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::Parse { pos: self.pos(), msg: msg.into() })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            self.err(format!("expected '{c}'"))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expr::new(Node::Add(lhs, self.term()?));
            } else if self.eat('-') {
                lhs = Expr::new(Node::Sub(lhs, self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expr::new(Node::Mul(lhs, self.unary()?));
            } else if self.eat('/') {
                lhs = Expr::new(Node::Div(lhs, self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek() == Some(&Tok::Op('-')) {
            if let Some(Tok::Num(v)) = self.peek_at(1) {
                let v = *v;
                if self.peek_at(2) != Some(&Tok::Op('^')) {
                    self.i += 2;
                    return Ok(Expr::constant(-v));
                }
            }
            self.i += 1;
            return Ok(Expr::new(Node::Neg(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.peek() {
                Some(Tok::Num(v)) if v.fract() == 0.0 && v.abs() <= i32::MAX as f64 => {
                    let n = *v as i32;
                    self.i += 1;
                    return Ok(base.powi(if neg { -n } else { n }));
                }
                _ => return self.err("exponent must be an integer literal"),
            }
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.i += 1;
                Ok(Expr::constant(v))
            }
            Some(Tok::Op('(')) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.i += 1;
                match name.as_str() {
                    "pi" => Ok(Expr::constant(std::f64::consts::PI)),
                    "sin" | "cos" | "exp" | "sinc" => {
                        self.expect('(')?;
                        let arg = self.expr()?;
                        self.expect(')')?;
                        Ok(match name.as_str() {
                            "sin" => arg.sin(),
                            "cos" => arg.cos(),
                            "exp" => arg.exp(),
                            _ => arg.sinc(),
                        })
                    }
                    v if v.starts_with('y') => match v[1..].parse::<usize>() {
                        Ok(k) if k >= 1 => Ok(Expr::var(k - 1)),
                        _ => {
                            self.i -= 1;
                            self.err(format!("bad variable '{v}' (expected y1, y2, ...)"))
                        }
                    },
                    other => {
                        self.i -= 1;
                        self.err(format!("unknown identifier '{other}'"))
                    }
                }
            }
            Some(t) => self.err(format!("unexpected token {t:?}")),
            None => self.err("unexpected end of input"),
        }
    }
}

/// Parses an expression in the grammar documented at module level.
pub fn parse_expr(src: &str) -> Result<Expr> {
    let toks = lex(src)?;
    let mut p = Parser { toks, i: 0, end: src.len() };
    let e = p.expr()?;
    if p.i != p.toks.len() {
        return p.err("trailing input");
    }
    Ok(e)
}
