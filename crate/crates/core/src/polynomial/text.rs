//! The polynomial text format used in configs:
//! `coef * x1^a1 * ... * xn^an + ...`, whitespace-insensitive, `^1` optional.

use std::fmt::Write;

use thiserror::Error;

use super::{Basis, MultiIndex, Polynomial};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("parse error at column {pos}: {msg}")]
pub struct ParseError {
    /// Zero-based byte offset into the input.
    pub pos: usize,
    pub msg: String,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, msg: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            pos: self.pos,
            msg: msg.into(),
        })
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn number(&mut self) -> Result<f64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let s = self.src;
        let mut i = self.pos;
        while i < s.len() && (s[i].is_ascii_digit() || s[i] == b'.') {
            i += 1;
        }
        if i < s.len() && (s[i] == b'e' || s[i] == b'E') {
            let mut j = i + 1;
            if j < s.len() && (s[j] == b'+' || s[j] == b'-') {
                j += 1;
            }
            if j < s.len() && s[j].is_ascii_digit() {
                while j < s.len() && s[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = std::str::from_utf8(&s[start..i]).unwrap();
        match text.parse::<f64>() {
            Ok(v) => {
                self.pos = i;
                Ok(v)
            }
            Err(_) => self.err(format!("invalid number {text:?}")),
        }
    }

    fn integer(&mut self) -> Result<u32, ParseError> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected integer");
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .unwrap()
            .parse()
            .map_err(|_| ParseError {
                pos: start,
                msg: "integer out of range".into(),
            })
    }

    // factor := number | 'x' index ['^' integer]
    fn factor(&mut self, coef: &mut f64, exps: &mut [u32]) -> Result<(), ParseError> {
        match self.peek() {
            Some(b'x') => {
                let at = self.pos;
                self.pos += 1;
                let var = self.integer()? as usize;
                if var == 0 || var > self.dim {
                    return Err(ParseError {
                        pos: at,
                        msg: format!("variable x{var} outside x1..x{}", self.dim),
                    });
                }
                let mut e = 1;
                if self.peek() == Some(b'^') {
                    self.pos += 1;
                    e = self.integer()?;
                }
                exps[var - 1] += e;
                Ok(())
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => {
                *coef *= self.number()?;
                Ok(())
            }
            Some(c) => self.err(format!("unexpected character {:?}", c as char)),
            None => self.err("unexpected end of input"),
        }
    }

    fn term(&mut self, sign: f64) -> Result<(MultiIndex, f64), ParseError> {
        let mut coef = sign;
        let mut exps = vec![0u32; self.dim];
        self.factor(&mut coef, &mut exps)?;
        while self.peek() == Some(b'*') {
            self.pos += 1;
            self.factor(&mut coef, &mut exps)?;
        }
        Ok((MultiIndex::new(exps), coef))
    }
}

pub(super) fn parse(text: &str, dim: usize) -> Result<Polynomial, ParseError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        dim,
    };
    let mut terms = Vec::new();
    let mut sign = 1.0;
    if let Some(c @ (b'+' | b'-')) = p.peek() {
        p.pos += 1;
        if c == b'-' {
            sign = -1.0;
        }
    }
    if p.peek().is_none() {
        return p.err("empty polynomial");
    }
    terms.push(p.term(sign)?);
    loop {
        match p.peek() {
            None => break,
            Some(b'+') => {
                p.pos += 1;
                terms.push(p.term(1.0)?);
            }
            Some(b'-') => {
                p.pos += 1;
                terms.push(p.term(-1.0)?);
            }
            Some(c) => return p.err(format!("expected '+' or '-', found {:?}", c as char)),
        }
    }
    Ok(Polynomial::from_terms(dim, Basis::Monomial, terms))
}

pub(super) fn render(p: &Polynomial) -> String {
    debug_assert_eq!(p.basis(), Basis::Monomial);
    if p.is_zero() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (i, (idx, c)) in p.terms().enumerate() {
        if i == 0 {
            if c < 0.0 {
                out.push('-');
            }
        } else if c < 0.0 {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        write!(out, "{}", c.abs()).unwrap();
        for (k, &e) in idx.exponents().iter().enumerate() {
            match e {
                0 => {}
                1 => write!(out, "*x{}", k + 1).unwrap(),
                _ => write!(out, "*x{}^{}", k + 1, e).unwrap(),
            }
        }
    }
    out
}
