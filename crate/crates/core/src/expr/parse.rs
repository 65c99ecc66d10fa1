//! Recursive-descent parser for field expressions.
//!
//! Grammar, loosest to tightest binding:
//!
//! ```text
//! field  := expr (';' expr)*
//! expr   := term  (('+' | '-') term)*
//! term   := power (('*' | '/') power)*
//! power  := atom  ('^' '-'? INTEGER)*
//! atom   := '-' atom | NUMBER | IDENT | IDENT '(' expr ')' | '(' expr ')'
//! ```
//!
//! Unary minus binds tighter than `^`: `-x1^2` is `(-x1)^2`. Identifiers are
//! coordinates `x1..xn`, bound parameter names (substituted as constants), or
//! the functions `sin`, `cos`, `exp`. A `-` directly in front of a numeric
//! literal is folded into the literal so negative constants survive an
//! unparse/parse round trip.

use std::collections::BTreeMap;

use super::{Expr, ExprError, FieldExpr};

const MAX_EXPONENT: f64 = 1_000_000.0;

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Semi,
}

fn lex(text: &str) -> Result<Vec<(Token, usize)>, ExprError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\r' | '\n' => i += 1,
            '+' => {
                toks.push((Token::Plus, i));
                i += 1;
            }
            '-' => {
                toks.push((Token::Minus, i));
                i += 1;
            }
            '*' => {
                toks.push((Token::Star, i));
                i += 1;
            }
            '/' => {
                toks.push((Token::Slash, i));
                i += 1;
            }
            '^' => {
                toks.push((Token::Caret, i));
                i += 1;
            }
            '(' => {
                toks.push((Token::LParen, i));
                i += 1;
            }
            ')' => {
                toks.push((Token::RParen, i));
                i += 1;
            }
            ';' => {
                toks.push((Token::Semi, i));
                i += 1;
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    if i >= bytes.len() || !bytes[i].is_ascii_digit() {
                        return Err(ExprError::Syntax {
                            pos: i.min(bytes.len()),
                            msg: "expected digits after decimal point".to_string(),
                        });
                    }
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let lit = &text[start..i];
                let v: f64 = lit.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    msg: format!("invalid number `{lit}`"),
                })?;
                toks.push((Token::Num(v), start));
            }
            'a'..='z' | 'A'..='Z' | '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                toks.push((Token::Ident(text[start..i].to_string()), start));
            }
            _ => {
                return Err(ExprError::Syntax {
                    pos: i,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    Ok(toks)
}

/// Idents matching `x<index>` with a 1-based positive index are coordinates.
fn coord_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('x')?;
    if digits.is_empty() || digits.starts_with('0') || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse::<usize>().ok()
}

struct Parser<'a> {
    toks: Vec<(Token, usize)>,
    pos: usize,
    dim: usize,
    params: &'a BTreeMap<String, f64>,
    end: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map(|(_, p)| *p).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Token> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), ExprError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(ExprError::Syntax {
                pos: self.here(),
                msg: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Token::Plus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Token::Minus) => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.power()?;
        loop {
            match self.peek() {
                Some(Token::Star) => {
                    self.pos += 1;
                    let rhs = self.power()?;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Token::Slash) => {
                    self.pos += 1;
                    let rhs = self.power()?;
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let mut base = self.atom()?;
        while self.peek() == Some(&Token::Caret) {
            self.pos += 1;
            let neg = if self.peek() == Some(&Token::Minus) {
                self.pos += 1;
                true
            } else {
                false
            };
            let pos = self.here();
            match self.bump() {
                Some(Token::Num(v)) => {
                    if v.fract() != 0.0 || v.abs() > MAX_EXPONENT {
                        return Err(ExprError::Syntax {
                            pos,
                            msg: format!(
                                "exponent must be an integer with |k| <= {MAX_EXPONENT}, got {v}"
                            ),
                        });
                    }
                    let k = if neg { -v } else { v } as i32;
                    base = Expr::Pow(Box::new(base), k);
                }
                _ => {
                    return Err(ExprError::Syntax {
                        pos,
                        msg: "expected integer exponent after `^`".to_string(),
                    })
                }
            }
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let pos = self.here();
        match self.bump() {
            Some(Token::Minus) => {
                // A minus directly on a literal is a negative literal.
                if let Some(Token::Num(v)) = self.peek() {
                    let v = *v;
                    self.pos += 1;
                    Ok(Expr::Const(-v))
                } else {
                    Ok(Expr::Neg(Box::new(self.atom()?)))
                }
            }
            Some(Token::Num(v)) => Ok(Expr::Const(v)),
            Some(Token::LParen) => {
                let e = self.expr()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(e)
            }
            Some(Token::Ident(name)) => self.ident(name, pos),
            _ => Err(ExprError::Syntax {
                pos,
                msg: "expected expression".to_string(),
            }),
        }
    }

    fn ident(&mut self, name: String, pos: usize) -> Result<Expr, ExprError> {
        if matches!(name.as_str(), "sin" | "cos" | "exp") {
            self.expect(Token::LParen, &format!("`(` after `{name}`"))?;
            let arg = Box::new(self.expr()?);
            self.expect(Token::RParen, "`)`")?;
            return Ok(match name.as_str() {
                "sin" => Expr::Sin(arg),
                "cos" => Expr::Cos(arg),
                _ => Expr::Exp(arg),
            });
        }
        if let Some(idx) = coord_index(&name) {
            if idx > self.dim {
                return Err(ExprError::Syntax {
                    pos,
                    msg: format!(
                        "coordinate `{name}` out of range for dimension {}",
                        self.dim
                    ),
                });
            }
            return Ok(Expr::Coord(idx - 1));
        }
        match self.params.get(&name) {
            Some(v) => Ok(Expr::Const(*v)),
            None => Err(ExprError::UnknownIdentifier { pos, name }),
        }
    }
}

/// Parses `n` semicolon-separated component expressions into a [`FieldExpr`],
/// substituting `params` as named constants.
pub fn parse_field(
    text: &str,
    n: usize,
    params: &BTreeMap<String, f64>,
) -> Result<FieldExpr, ExprError> {
    if n == 0 {
        return Err(ExprError::Syntax {
            pos: 0,
            msg: "field dimension must be positive".to_string(),
        });
    }
    for key in params.keys() {
        if coord_index(key).is_some() || matches!(key.as_str(), "sin" | "cos" | "exp") {
            return Err(ExprError::Syntax {
                pos: 0,
                msg: format!("parameter name `{key}` collides with a coordinate or function"),
            });
        }
    }
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        dim: n,
        params,
        end: text.len(),
    };
    let mut components = Vec::new();
    loop {
        components.push(p.expr()?);
        match p.bump() {
            Some(Token::Semi) => continue,
            None => break,
            Some(_) => {
                return Err(ExprError::Syntax {
                    pos: p.toks[p.pos - 1].1,
                    msg: "expected `;` or end of input".to_string(),
                })
            }
        }
    }
    if components.len() != n {
        return Err(ExprError::ComponentCount {
            expected: n,
            found: components.len(),
        });
    }
    Ok(FieldExpr::from_components(components, n)?.with_params(params.clone()))
}
