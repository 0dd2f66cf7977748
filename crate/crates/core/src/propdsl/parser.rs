//! Condition-string parser.
//!
//! Parsing happens in two passes: text to a raw tree that still carries
//! identifiers, then resolution against the schema, the instance variables
//! and the literal bindings. Positional placeholders are bound in the order
//! the resolver meets them, which is their syntactic order.

use std::collections::HashMap;

use num_traits::{Signed, ToPrimitive};

use super::ast::{CmpOp, Condition, Expr};
use super::{Literal, PropError};
use crate::rational::{self, parse_rational, Rational};
use crate::schema::DatasetSchema;

pub(crate) const KEYWORDS: &[&str] = &["true", "false", "and", "or", "not", "predict", "mut"];

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(Rational),
    Ident(String),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Dot,
    Plus,
    Minus,
    Star,
    Arrow,
    Cmp(CmpOp),
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, PropError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let two = text.get(i..i + 2).unwrap_or("");
        let tok = match two {
            "=>" => Some(Tok::Arrow),
            "==" => Some(Tok::Cmp(CmpOp::Eq)),
            "!=" => Some(Tok::Cmp(CmpOp::Ne)),
            "<=" => Some(Tok::Cmp(CmpOp::Le)),
            ">=" => Some(Tok::Cmp(CmpOp::Ge)),
            _ => None,
        };
        if let Some(tok) = tok {
            out.push(Token { tok, pos: start });
            i += 2;
            continue;
        }
        let tok = match c {
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'[' => Tok::LBracket,
            b']' => Tok::RBracket,
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => Tok::Dot,
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'<' => Tok::Cmp(CmpOp::Lt),
            b'>' => Tok::Cmp(CmpOp::Gt),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'/' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let lexeme = &text[start..i];
                let value = parse_rational(lexeme)
                    .ok_or_else(|| PropError::syntax(start, format!("invalid number `{lexeme}`")))?;
                out.push(Token { tok: Tok::Num(value), pos: start });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token { tok: Tok::Ident(text[start..i].to_string()), pos: start });
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(PropError::syntax(start, format!("unexpected character `{ch}`")));
            }
        };
        out.push(Token { tok, pos: start });
        i += 1;
    }
    Ok(out)
}

#[derive(Clone, Debug)]
enum RawKey {
    Num(Rational, usize),
    Ident(String, usize),
}

#[derive(Clone, Debug)]
struct RawPredict {
    var: String,
    key: Option<RawKey>,
    pos: usize,
}

#[derive(Clone, Debug)]
enum RawExpr {
    Num(Rational),
    Ident(String, usize),
    Index(String, RawKey, usize),
    Predict(RawPredict),
    Neg(Box<RawExpr>),
    Add(Box<RawExpr>, Box<RawExpr>),
    Sub(Box<RawExpr>, Box<RawExpr>),
    Mul(Box<RawExpr>, Box<RawExpr>, usize),
}

#[derive(Clone, Debug)]
enum RawCond {
    Bool(bool),
    Not(Box<RawCond>),
    And(Vec<RawCond>),
    Or(Vec<RawCond>),
    Implies(Box<RawCond>, Box<RawCond>),
    Cmp(CmpOp, RawExpr, RawExpr, usize),
    /// A bare arithmetic atom used as a boolean: `predict(x)[dog]`, or a
    /// label name inside a concept formula.
    Atom(RawExpr, usize),
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.pos)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn is_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == w)
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), PropError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            Err(PropError::syntax(self.here(), format!("expected {what}")))
        }
    }

    fn cond(&mut self) -> Result<RawCond, PropError> {
        let lhs = self.or()?;
        if self.peek() == Some(&Tok::Arrow) {
            self.pos += 1;
            let rhs = self.cond()?;
            return Ok(RawCond::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<RawCond, PropError> {
        let mut parts = vec![self.and()?];
        while self.is_word("or") {
            self.pos += 1;
            parts.push(self.and()?);
        }
        Ok(if parts.len() == 1 { parts.remove(0) } else { RawCond::Or(parts) })
    }

    fn and(&mut self) -> Result<RawCond, PropError> {
        let mut parts = vec![self.not()?];
        while self.is_word("and") {
            self.pos += 1;
            parts.push(self.not()?);
        }
        Ok(if parts.len() == 1 { parts.remove(0) } else { RawCond::And(parts) })
    }

    fn not(&mut self) -> Result<RawCond, PropError> {
        if self.is_word("not") {
            self.pos += 1;
            return Ok(RawCond::Not(Box::new(self.not()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<RawCond, PropError> {
        if self.is_word("true") {
            self.pos += 1;
            return Ok(RawCond::Bool(true));
        }
        if self.is_word("false") {
            self.pos += 1;
            return Ok(RawCond::Bool(false));
        }
        if self.peek() == Some(&Tok::LParen) {
            // Either a parenthesised condition or an arithmetic operand.
            let save = self.pos;
            self.pos += 1;
            let grouped = self.cond().and_then(|c| self.expect(Tok::RParen, "`)`").map(|_| c));
            let continues_arith = matches!(self.peek(), Some(Tok::Plus | Tok::Minus | Tok::Star | Tok::Cmp(_)));
            match grouped {
                Ok(c) if !continues_arith => return Ok(c),
                Ok(_) => {
                    self.pos = save;
                    return self.cmp();
                }
                Err(first) => {
                    let furthest = self.pos;
                    self.pos = save;
                    return self.cmp().map_err(|second| if furthest > self.pos { first } else { second });
                }
            }
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<RawCond, PropError> {
        let pos = self.here();
        let lhs = self.arith()?;
        if let Some(Tok::Cmp(op)) = self.peek().cloned() {
            self.pos += 1;
            let rhs = self.arith()?;
            return Ok(RawCond::Cmp(op, lhs, rhs, pos));
        }
        match lhs {
            RawExpr::Predict(_) | RawExpr::Ident(..) => Ok(RawCond::Atom(lhs, pos)),
            _ => Err(PropError::syntax(self.here(), "expected comparison operator")),
        }
    }

    fn arith(&mut self) -> Result<RawExpr, PropError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    lhs = RawExpr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    lhs = RawExpr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<RawExpr, PropError> {
        let mut lhs = self.factor()?;
        while self.peek() == Some(&Tok::Star) {
            let pos = self.here();
            self.pos += 1;
            lhs = RawExpr::Mul(Box::new(lhs), Box::new(self.factor()?), pos);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<RawExpr, PropError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(RawExpr::Num(v)),
            Some(Tok::Minus) => match self.peek().cloned() {
                Some(Tok::Num(v)) => {
                    self.pos += 1;
                    Ok(RawExpr::Num(-v))
                }
                _ => Ok(RawExpr::Neg(Box::new(self.factor()?))),
            },
            Some(Tok::LParen) => {
                let e = self.arith()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(name)) if name == "mut" => {
                self.expect(Tok::Dot, "`.` after `mut`")?;
                if !self.is_word("predict") {
                    return Err(PropError::syntax(self.here(), "expected `predict` after `mut.`"));
                }
                self.pos += 1;
                self.predict_tail(pos)
            }
            Some(Tok::Ident(name)) if name == "predict" => self.predict_tail(pos),
            Some(Tok::Ident(name)) if KEYWORDS.contains(&name.as_str()) => {
                Err(PropError::syntax(pos, format!("unexpected keyword `{name}`")))
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LBracket) {
                    self.pos += 1;
                    let key = self.key()?;
                    self.expect(Tok::RBracket, "`]`")?;
                    Ok(RawExpr::Index(name, key, pos))
                } else {
                    Ok(RawExpr::Ident(name, pos))
                }
            }
            _ => Err(PropError::syntax(pos, "expected a number, identifier or `predict(...)`")),
        }
    }

    fn predict_tail(&mut self, pos: usize) -> Result<RawExpr, PropError> {
        self.expect(Tok::LParen, "`(` after `predict`")?;
        let var = match self.bump() {
            Some(Tok::Ident(v)) if !KEYWORDS.contains(&v.as_str()) => v,
            _ => return Err(PropError::syntax(self.here(), "expected instance variable")),
        };
        self.expect(Tok::RParen, "`)`")?;
        let key = if self.peek() == Some(&Tok::LBracket) {
            self.pos += 1;
            let k = self.key()?;
            self.expect(Tok::RBracket, "`]`")?;
            Some(k)
        } else {
            None
        };
        Ok(RawExpr::Predict(RawPredict { var, key, pos }))
    }

    fn key(&mut self) -> Result<RawKey, PropError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(RawKey::Num(v, pos)),
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => Ok(RawKey::Ident(s, pos)),
            _ => Err(PropError::syntax(pos, "expected index or name")),
        }
    }
}

/// Everything a condition may refer to besides the schema.
pub struct Scope<'a> {
    pub schema: &'a DatasetSchema,
    pub instance_vars: &'a [String],
    /// Values bound positionally to placeholders, in syntactic order.
    pub args: &'a [Literal],
    /// Values bound by name (`let` lines and loop variables).
    pub named: &'a HashMap<String, Literal>,
    /// Inside a concept formula, bare label names stand for
    /// `predict(<var>)[label]`.
    pub concept_var: Option<&'a str>,
}

enum Value {
    Scalar(Expr),
    WholePrediction(String, usize),
    Vector(Vec<Rational>, usize),
}

struct Resolver<'s, 'a> {
    scope: &'s Scope<'a>,
    placeholders: HashMap<String, usize>,
}

impl<'s, 'a> Resolver<'s, 'a> {
    fn lookup(&mut self, name: &str, pos: usize) -> Result<Literal, PropError> {
        if let Some(v) = self.scope.named.get(name) {
            return Ok(v.clone());
        }
        let next = self.placeholders.len();
        let slot = *self.placeholders.entry(name.to_string()).or_insert(next);
        self.scope.args.get(slot).cloned().ok_or_else(|| PropError::Arity {
            expected: self.scope.args.len(),
            found: slot + 1,
            detail: format!("placeholder `{name}` at offset {pos} has no argument"),
        })
    }

    fn index_value(&mut self, key: &RawKey, bound: usize, what: &str) -> Result<usize, PropError> {
        let (value, pos) = match key {
            RawKey::Num(v, pos) => (v.clone(), *pos),
            RawKey::Ident(name, pos) => match self.lookup(name, *pos)? {
                Literal::Scalar(v) => (v, *pos),
                Literal::Vector(_) => {
                    return Err(PropError::syntax(*pos, format!("`{name}` is a vector, expected an index")))
                }
            },
        };
        value
            .is_integer()
            .then(|| value.to_integer())
            .filter(|v| !v.is_negative())
            .and_then(|v| v.to_usize())
            .filter(|&i| i < bound)
            .ok_or_else(|| PropError::syntax(pos, format!("{what} index {} out of range", rational::format_rational(&value))))
    }

    fn var(&self, name: &str, pos: usize) -> Result<String, PropError> {
        if self.scope.instance_vars.iter().any(|v| v == name) {
            Ok(name.to_string())
        } else {
            Err(PropError::UnknownVar { name: name.to_string(), pos })
        }
    }

    fn feature_index(&mut self, key: &RawKey) -> Result<usize, PropError> {
        if let RawKey::Ident(name, _) = key {
            if !self.scope.named.contains_key(name) {
                if let Some(i) = self.scope.schema.feature_index(name) {
                    return Ok(i);
                }
            }
        }
        self.index_value(key, self.scope.schema.f_size(), "feature").map_err(|e| match (e, key) {
            (PropError::Arity { .. }, RawKey::Ident(name, pos)) if self.scope.args.is_empty() => {
                PropError::UnknownFeature { name: name.clone(), pos: *pos }
            }
            (e, _) => e,
        })
    }

    fn label_index(&mut self, key: &RawKey) -> Result<usize, PropError> {
        if let RawKey::Ident(name, _) = key {
            if !self.scope.named.contains_key(name) {
                if let Some(i) = self.scope.schema.label_index(name) {
                    return Ok(i);
                }
            }
        }
        self.index_value(key, self.scope.schema.l_size(), "label").map_err(|e| match (e, key) {
            (PropError::Arity { .. }, RawKey::Ident(name, pos)) if self.scope.args.is_empty() => {
                PropError::UnknownLabel { name: name.clone(), pos: *pos }
            }
            (e, _) => e,
        })
    }

    fn value(&mut self, e: &RawExpr) -> Result<Value, PropError> {
        Ok(match e {
            RawExpr::Num(v) => Value::Scalar(Expr::Lit(v.clone())),
            RawExpr::Ident(name, pos) => {
                if let Some(var) = self.scope.concept_var {
                    if !self.scope.named.contains_key(name) {
                        if let Some(label) = self.scope.schema.label_index(name) {
                            return Ok(Value::Scalar(Expr::predict(var, label)));
                        }
                    }
                }
                if self.scope.instance_vars.iter().any(|v| v == name) {
                    return Err(PropError::syntax(*pos, format!("instance variable `{name}` needs an index")));
                }
                match self.lookup(name, *pos)? {
                    Literal::Scalar(v) => Value::Scalar(Expr::Lit(v)),
                    Literal::Vector(vs) => Value::Vector(vs, *pos),
                }
            }
            RawExpr::Index(name, key, pos) => {
                if self.scope.instance_vars.iter().any(|v| v == name) {
                    let index = self.feature_index(key)?;
                    Value::Scalar(Expr::feature(name, index))
                } else {
                    let bound = self.lookup(name, *pos).map_err(|e| match e {
                        PropError::Arity { .. } => PropError::UnknownVar { name: name.clone(), pos: *pos },
                        e => e,
                    })?;
                    match bound {
                        Literal::Vector(vs) => {
                            let i = self.index_value(key, vs.len(), "vector")?;
                            Value::Scalar(Expr::Lit(vs[i].clone()))
                        }
                        Literal::Scalar(_) => {
                            return Err(PropError::UnknownVar { name: name.clone(), pos: *pos });
                        }
                    }
                }
            }
            RawExpr::Predict(p) => {
                let var = self.var(&p.var, p.pos)?;
                match &p.key {
                    Some(key) => Value::Scalar(Expr::Predict { var, label: self.label_index(key)? }),
                    None if self.scope.schema.l_size() == 1 => Value::Scalar(Expr::Predict { var, label: 0 }),
                    None => Value::WholePrediction(var, p.pos),
                }
            }
            RawExpr::Neg(inner) => {
                let inner = self.scalar(inner)?;
                Value::Scalar(Expr::Mul(Box::new(Expr::int(-1)), Box::new(inner)))
            }
            RawExpr::Add(a, b) => Value::Scalar(Expr::Add(Box::new(self.scalar(a)?), Box::new(self.scalar(b)?))),
            RawExpr::Sub(a, b) => Value::Scalar(Expr::Sub(Box::new(self.scalar(a)?), Box::new(self.scalar(b)?))),
            RawExpr::Mul(a, b, pos) => {
                let a = self.scalar(a)?;
                let b = self.scalar(b)?;
                if !a.is_ground() && !b.is_ground() {
                    return Err(PropError::Nonlinear { pos: *pos });
                }
                Value::Scalar(Expr::Mul(Box::new(a), Box::new(b)))
            }
        })
    }

    fn scalar(&mut self, e: &RawExpr) -> Result<Expr, PropError> {
        match self.value(e)? {
            Value::Scalar(x) => Ok(x),
            Value::WholePrediction(_, pos) | Value::Vector(_, pos) => {
                Err(PropError::syntax(pos, "vector value used in arithmetic"))
            }
        }
    }

    /// Per-label expressions of a vector-valued side.
    fn components(&self, v: Value, m: usize) -> Result<Vec<Expr>, PropError> {
        match v {
            Value::Scalar(e) if m == 1 => Ok(vec![e]),
            Value::Scalar(_) => Err(PropError::syntax(0, "cannot compare a scalar with a prediction vector")),
            Value::WholePrediction(var, _) => Ok((0..m).map(|l| Expr::predict(&var, l)).collect()),
            Value::Vector(vs, pos) => {
                if vs.len() != m {
                    return Err(PropError::syntax(pos, format!("vector has {} entries, expected {m}", vs.len())));
                }
                Ok(vs.into_iter().map(Expr::Lit).collect())
            }
        }
    }

    fn cond(&mut self, c: &RawCond) -> Result<Condition, PropError> {
        Ok(match c {
            RawCond::Bool(b) => Condition::Bool(*b),
            RawCond::Not(inner) => Condition::not(self.cond(inner)?),
            RawCond::And(cs) => Condition::And(cs.iter().map(|c| self.cond(c)).collect::<Result<_, _>>()?),
            RawCond::Or(cs) => Condition::Or(cs.iter().map(|c| self.cond(c)).collect::<Result<_, _>>()?),
            RawCond::Implies(a, b) => {
                let a = self.cond(a)?;
                Condition::implies(a, self.cond(b)?)
            }
            RawCond::Atom(e, pos) => match self.value(e)? {
                Value::Scalar(x @ Expr::Predict { .. }) => Condition::cmp(CmpOp::Eq, x, Expr::int(1)),
                _ => return Err(PropError::syntax(*pos, "expected comparison operator")),
            },
            RawCond::Cmp(op, l, r, pos) => {
                let lv = self.value(l)?;
                let rv = self.value(r)?;
                match (lv, rv) {
                    (Value::Scalar(a), Value::Scalar(b)) => Condition::cmp(*op, a, b),
                    (lv, rv) => {
                        if !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                            return Err(PropError::syntax(*pos, "prediction vectors only support == and !="));
                        }
                        let m = self.scope.schema.l_size();
                        let lhs = self.components(lv, m).map_err(|e| e.at(*pos))?;
                        let rhs = self.components(rv, m).map_err(|e| e.at(*pos))?;
                        let eqs =
                            lhs.into_iter().zip(rhs).map(|(a, b)| Condition::cmp(CmpOp::Eq, a, b)).collect();
                        let all = Condition::all(eqs);
                        if *op == CmpOp::Eq {
                            all
                        } else {
                            Condition::not(all)
                        }
                    }
                }
            }
        })
    }
}

pub(crate) fn parse_with_scope(text: &str, scope: &Scope) -> Result<Condition, PropError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Err(PropError::syntax(0, "empty condition"));
    }
    let mut parser = Parser { toks, pos: 0, end: text.len() };
    let raw = parser.cond()?;
    if parser.pos < parser.toks.len() {
        return Err(PropError::syntax(parser.here(), "unexpected trailing input"));
    }
    let mut resolver = Resolver { scope, placeholders: HashMap::new() };
    let cond = resolver.cond(&raw)?;
    if resolver.placeholders.len() != scope.args.len() {
        return Err(PropError::Arity {
            expected: resolver.placeholders.len(),
            found: scope.args.len(),
            detail: "argument count does not match placeholder count".into(),
        });
    }
    Ok(cond)
}
