//! Line-oriented property files.
//!
//! ```text
//! # individual fairness on `gender`
//! name fairness-gender
//! var x y
//! let s = gender
//! assume forall-features i except s: x[i] == y[i]
//! assume x[s] != y[s]
//! assert predict(x) == predict(y)
//! ```
//!
//! `forall-features i except s: <cond>` unrolls to one assume per feature
//! index other than `s`; `forall-features f in T: <cond>` unrolls over the
//! indices listed in the vector `T`.

use std::collections::HashMap;

use num_traits::{Signed, ToPrimitive};

use super::parser::{parse_with_scope, Scope};
use super::{build_property, check_var_names, AssertClause, AssumeClause, Literal, PropError, PropertySpec};
use crate::rational::{self, parse_rational};
use crate::schema::DatasetSchema;

fn line_err(line: usize, e: PropError) -> PropError {
    PropError::Line { line, source: Box::new(e) }
}

fn bad(message: impl Into<String>) -> PropError {
    PropError::syntax(0, message)
}

fn parse_literal(text: &str, schema: &DatasetSchema, named: &HashMap<String, Literal>) -> Result<Literal, PropError> {
    let text = text.trim();
    if let Some(inner) = text.strip_prefix('[') {
        let inner = inner.strip_suffix(']').ok_or_else(|| bad("unterminated vector literal"))?;
        if inner.trim().is_empty() {
            return Ok(Literal::Vector(Vec::new()));
        }
        let items = inner
            .split(',')
            .map(|item| match parse_literal(item, schema, named)? {
                Literal::Scalar(v) => Ok(v),
                Literal::Vector(_) => Err(bad("nested vectors are not supported")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        return Ok(Literal::Vector(items));
    }
    if let Some(v) = parse_rational(text) {
        return Ok(Literal::Scalar(v));
    }
    if let Some(v) = named.get(text) {
        return Ok(v.clone());
    }
    if let Some(i) = schema.feature_index(text) {
        return Ok(Literal::int(i as i64));
    }
    if let Some(i) = schema.label_index(text) {
        return Ok(Literal::int(i as i64));
    }
    Err(bad(format!("cannot interpret `{text}` as a literal")))
}

fn as_index(lit: &Literal, bound: usize) -> Result<usize, PropError> {
    match lit {
        Literal::Scalar(v) if v.is_integer() && !v.is_negative() => v
            .to_integer()
            .to_usize()
            .filter(|&i| i < bound)
            .ok_or_else(|| bad(format!("index {} out of range", rational::format_rational(v)))),
        _ => Err(bad("expected a feature index")),
    }
}

/// Parses a property file against `schema`.
pub fn parse_property_file(text: &str, schema: &DatasetSchema) -> Result<PropertySpec, PropError> {
    let mut vars: Option<Vec<String>> = None;
    let mut named: HashMap<String, Literal> = HashMap::new();
    let mut assumes: Vec<AssumeClause> = Vec::new();
    let mut assertion: Option<AssertClause> = None;
    let mut id: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (head, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let rest = rest.trim();
        let result: Result<(), PropError> = (|| {
            match head {
                "name" => id = Some(rest.to_string()),
                "var" => {
                    if vars.is_some() {
                        return Err(bad("duplicate `var` line"));
                    }
                    let list: Vec<String> = rest.split_whitespace().map(str::to_string).collect();
                    if list.is_empty() {
                        return Err(bad("`var` needs at least one instance variable"));
                    }
                    check_var_names(&list)?;
                    vars = Some(list);
                }
                "let" => {
                    let (name, value) = rest.split_once('=').ok_or_else(|| bad("expected `let <name> = <value>`"))?;
                    let name = name.trim();
                    if !crate::schema::is_identifier(name) {
                        return Err(bad(format!("`{name}` is not an identifier")));
                    }
                    let value = parse_literal(value, schema, &named)?;
                    named.insert(name.to_string(), value);
                }
                "assume" | "assert" => {
                    let iv = vars.as_deref().ok_or_else(|| bad("`var` must come before clauses"))?;
                    if head == "assert" {
                        if assertion.is_some() {
                            return Err(bad("only one `assert` is allowed"));
                        }
                        let scope = Scope { schema, instance_vars: iv, args: &[], named: &named, concept_var: None };
                        let ast = parse_with_scope(rest, &scope)?;
                        assertion = Some(AssertClause::new(ast, rest, Vec::new())?);
                    } else if let Some(body) = rest.strip_prefix("forall-features") {
                        for (binding, text) in unroll(body, schema, &named)? {
                            let mut local = named.clone();
                            local.insert(binding.0.clone(), Literal::int(binding.1 as i64));
                            let scope =
                                Scope { schema, instance_vars: iv, args: &[], named: &local, concept_var: None };
                            let ast = parse_with_scope(text, &scope)?;
                            assumes.push(AssumeClause::new(ast, text, vec![Literal::int(binding.1 as i64)])?);
                        }
                    } else {
                        let scope = Scope { schema, instance_vars: iv, args: &[], named: &named, concept_var: None };
                        let ast = parse_with_scope(rest, &scope)?;
                        assumes.push(AssumeClause::new(ast, rest, Vec::new())?);
                    }
                }
                other => return Err(bad(format!("unknown directive `{other}`"))),
            }
            Ok(())
        })();
        result.map_err(|e| line_err(lineno, e))?;
    }

    let iv = vars.ok_or_else(|| bad("missing `var` line"))?;
    let assertion = assertion.ok_or_else(|| bad("missing `assert` line"))?;
    let mut spec = build_property(assumes, assertion)?;
    // Declared-but-unused variables still get their own model copy.
    for v in iv {
        if !spec.instance_vars.contains(&v) {
            spec.instance_vars.push(v);
        }
    }
    if let Some(id) = id {
        spec.id = id;
    }
    Ok(spec)
}

type Binding = (String, usize);

/// Expands `i except s: cond` / `i in T: cond` to per-index clause texts.
fn unroll<'t>(
    body: &'t str,
    schema: &DatasetSchema,
    named: &HashMap<String, Literal>,
) -> Result<Vec<(Binding, &'t str)>, PropError> {
    let (header, cond) = body.split_once(':').ok_or_else(|| bad("expected `:` after forall-features header"))?;
    let words: Vec<&str> = header.split_whitespace().collect();
    let n = schema.f_size();
    let (var, indices) = match words.as_slice() {
        [var, "except", s @ ..] if !s.is_empty() => {
            let s = as_index(&parse_literal(&s.join(" "), schema, named)?, n)?;
            (*var, (0..n).filter(|&i| i != s).collect::<Vec<_>>())
        }
        [var] => (*var, (0..n).collect()),
        [var, "in", set @ ..] if !set.is_empty() => match parse_literal(&set.join(" "), schema, named)? {
            Literal::Vector(items) => {
                let idx = items
                    .into_iter()
                    .map(|v| as_index(&Literal::Scalar(v), n))
                    .collect::<Result<Vec<_>, _>>()?;
                (*var, idx)
            }
            Literal::Scalar(_) => return Err(bad("`in` expects a vector of feature indices")),
        },
        _ => return Err(bad("expected `forall-features <var> [except <s> | in <vector>]: <cond>`")),
    };
    if !crate::schema::is_identifier(var) {
        return Err(bad(format!("`{var}` is not an identifier")));
    }
    let cond = cond.trim();
    Ok(indices.into_iter().map(|i| ((var.to_string(), i), cond)).collect())
}
