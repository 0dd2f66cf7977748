use std::fmt;

use num_traits::{Signed, Zero};

use crate::rational::{parse_rational, Rational};

/// SMT-LIB term or command.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum SExpr {
    Atom(String),
    List(Vec<SExpr>),
}

pub fn atom(s: impl Into<String>) -> SExpr {
    SExpr::Atom(s.into())
}

pub fn app(op: &str, args: Vec<SExpr>) -> SExpr {
    let mut items = Vec::with_capacity(args.len() + 1);
    items.push(atom(op));
    items.extend(args);
    SExpr::List(items)
}

/// `(and ...)`, collapsing the empty and singleton cases.
pub fn and(mut parts: Vec<SExpr>) -> SExpr {
    match parts.len() {
        0 => atom("true"),
        1 => parts.pop().unwrap(),
        _ => app("and", parts),
    }
}

pub fn or(mut parts: Vec<SExpr>) -> SExpr {
    match parts.len() {
        0 => atom("false"),
        1 => parts.pop().unwrap(),
        _ => app("or", parts),
    }
}

pub fn not(inner: SExpr) -> SExpr {
    app("not", vec![inner])
}

pub fn eq(a: SExpr, b: SExpr) -> SExpr {
    app("=", vec![a, b])
}

/// Integer literal; negative values as `(- n)`.
pub fn int_lit(value: &num_bigint::BigInt) -> SExpr {
    if value.is_negative() {
        app("-", vec![atom((-value).to_string())])
    } else {
        atom(value.to_string())
    }
}

/// Real literal: `3.0`, `(/ 7.0 2.0)`, negatives wrapped in `(- ...)`.
pub fn real_lit(value: &Rational) -> SExpr {
    let magnitude = value.abs();
    let body = if magnitude.is_integer() {
        atom(format!("{}.0", magnitude.numer()))
    } else {
        app("/", vec![atom(format!("{}.0", magnitude.numer())), atom(format!("{}.0", magnitude.denom()))])
    };
    if value.is_negative() {
        app("-", vec![body])
    } else {
        body
    }
}

impl fmt::Display for SExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SExpr::Atom(a) => f.write_str(a),
            SExpr::List(items) => {
                f.write_str("(")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses every top-level s-expression in `text`.
pub fn parse_all(text: &str) -> Result<Vec<SExpr>, String> {
    let mut stack: Vec<Vec<SExpr>> = vec![Vec::new()];
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        match c {
            '(' => {
                chars.next();
                stack.push(Vec::new());
            }
            ')' => {
                chars.next();
                if stack.len() < 2 {
                    return Err(format!("unbalanced `)` at byte {pos}"));
                }
                let list = stack.pop().unwrap();
                stack.last_mut().unwrap().push(SExpr::List(list));
            }
            ';' => {
                while chars.peek().is_some_and(|&(_, c)| c != '\n') {
                    chars.next();
                }
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '"' => {
                chars.next();
                let mut s = String::from('"');
                loop {
                    match chars.next() {
                        Some((_, '"')) => {
                            if chars.peek().is_some_and(|&(_, c)| c == '"') {
                                chars.next();
                                s.push_str("\"\"");
                            } else {
                                break;
                            }
                        }
                        Some((_, c)) => s.push(c),
                        None => return Err("unterminated string".into()),
                    }
                }
                s.push('"');
                stack.last_mut().unwrap().push(SExpr::Atom(s));
            }
            '|' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some((_, '|')) => break,
                        Some((_, c)) => s.push(c),
                        None => return Err("unterminated quoted symbol".into()),
                    }
                }
                stack.last_mut().unwrap().push(SExpr::Atom(s));
            }
            _ => {
                let mut s = String::new();
                while let Some(&(_, c)) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == ';' {
                        break;
                    }
                    s.push(c);
                    chars.next();
                }
                stack.last_mut().unwrap().push(SExpr::Atom(s));
            }
        }
    }
    if stack.len() != 1 {
        return Err("unbalanced `(`".into());
    }
    Ok(stack.pop().unwrap())
}

/// Evaluates a numeric model value: numerals, decimals, `(- v)`, `(/ a b)`,
/// `(* a b)`, `(+ a ...)` and `(to_real v)`.
pub fn eval_number(e: &SExpr) -> Option<Rational> {
    match e {
        SExpr::Atom(a) => {
            if a.starts_with(['-', '+']) || a.contains('/') {
                return None;
            }
            parse_rational(a)
        }
        SExpr::List(items) => {
            let (op, args) = items.split_first()?;
            let SExpr::Atom(op) = op else { return None };
            let vals = args.iter().map(eval_number).collect::<Option<Vec<_>>>()?;
            match (op.as_str(), vals.as_slice()) {
                ("-", [v]) => Some(-v.clone()),
                ("-", [a, rest @ ..]) if !rest.is_empty() => Some(rest.iter().fold(a.clone(), |acc, v| acc - v)),
                ("+", [_, ..]) => Some(vals.iter().fold(Rational::zero(), |acc, v| acc + v)),
                ("*", [_, ..]) => Some(vals.iter().skip(1).fold(vals[0].clone(), |acc, v| acc * v)),
                ("/", [a, b]) if !b.is_zero() => Some(a / b),
                ("to_real", [v]) => Some(v.clone()),
                _ => None,
            }
        }
    }
}
