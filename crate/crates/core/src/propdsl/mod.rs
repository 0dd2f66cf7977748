//! Assume/assert property language.
//!
//! A property is a conjunction of assume clauses over the features of one or
//! more instance variables, and one assert clause over the predictions the
//! model makes on them. A counterexample is a valuation where every assume
//! holds and the assertion fails.

mod ast;
mod file;
mod parser;

use std::collections::HashMap;

use thiserror::Error;

pub use ast::{CmpOp, Condition, EvalError, Expr, Valuation};
pub use file::parse_property_file;
pub use parser::Scope;

use crate::rational::{self, Rational};
use crate::schema::{DatasetSchema, Instance, Prediction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown feature `{name}` at offset {pos}")]
    UnknownFeature { name: String, pos: usize },
    #[error("unknown label `{name}` at offset {pos}")]
    UnknownLabel { name: String, pos: usize },
    #[error("unknown instance variable `{name}` at offset {pos}")]
    UnknownVar { name: String, pos: usize },
    #[error("argument mismatch: {expected} placeholders, {found} arguments ({detail})")]
    Arity { expected: usize, found: usize, detail: String },
    #[error("nonlinear multiplication at offset {pos}: one factor must be constant")]
    Nonlinear { pos: usize },
    #[error("invalid clause: {0}")]
    Clause(String),
    #[error("invalid property parameter: {0}")]
    Parameter(String),
    #[error("line {line}: {source}")]
    Line {
        line: usize,
        #[source]
        source: Box<PropError>,
    },
}

impl PropError {
    pub(crate) fn syntax(pos: usize, message: impl Into<String>) -> Self {
        PropError::Syntax { pos, message: message.into() }
    }

    fn at(self, pos: usize) -> Self {
        match self {
            PropError::Syntax { pos: 0, message } => PropError::Syntax { pos, message },
            other => other,
        }
    }
}

/// A value substituted for a placeholder identifier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Literal {
    Scalar(Rational),
    Vector(Vec<Rational>),
}

impl Literal {
    pub fn int(v: i64) -> Self {
        Literal::Scalar(rational::int(v))
    }

    pub fn ints(vs: &[i64]) -> Self {
        Literal::Vector(vs.iter().map(|&v| rational::int(v)).collect())
    }
}

/// Parses a condition string, binding placeholders positionally to `args`.
pub fn parse_condition(
    text: &str,
    args: &[Literal],
    schema: &DatasetSchema,
    instance_vars: &[String],
) -> Result<Condition, PropError> {
    check_var_names(instance_vars)?;
    let named = HashMap::new();
    parser::parse_with_scope(text, &Scope { schema, instance_vars, args, named: &named, concept_var: None })
}

/// Parses a concept formula over label names, e.g. `dog => not cat`, as a
/// condition over the predictions on `var`.
pub fn parse_concept_formula(text: &str, schema: &DatasetSchema, var: &str) -> Result<Condition, PropError> {
    let vars = [var.to_string()];
    check_var_names(&vars)?;
    let named = HashMap::new();
    parser::parse_with_scope(
        text,
        &Scope { schema, instance_vars: &vars, args: &[], named: &named, concept_var: Some(var) },
    )
}

fn check_var_names(vars: &[String]) -> Result<(), PropError> {
    for v in vars {
        if !crate::schema::is_identifier(v) || parser::KEYWORDS.contains(&v.as_str()) {
            return Err(PropError::Parameter(format!("`{v}` cannot name an instance variable")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssumeClause {
    pub ast: Condition,
    pub source: String,
    pub args: Vec<Literal>,
}

impl AssumeClause {
    pub fn new(ast: Condition, source: impl Into<String>, args: Vec<Literal>) -> Result<Self, PropError> {
        let source = source.into();
        if ast.mentions_predict() {
            return Err(PropError::Clause(format!("assume `{source}` refers to a prediction")));
        }
        Ok(Self { ast, source, args })
    }

    /// Builds a clause from its own printed form.
    pub fn from_ast(ast: Condition) -> Result<Self, PropError> {
        let source = ast.to_string();
        Self::new(ast, source, Vec::new())
    }

    pub fn parse(
        text: &str,
        args: &[Literal],
        schema: &DatasetSchema,
        instance_vars: &[String],
    ) -> Result<Self, PropError> {
        Self::new(parse_condition(text, args, schema, instance_vars)?, text, args.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssertClause {
    pub ast: Condition,
    pub source: String,
    pub args: Vec<Literal>,
}

impl AssertClause {
    pub fn new(ast: Condition, source: impl Into<String>, args: Vec<Literal>) -> Result<Self, PropError> {
        let source = source.into();
        if !ast.mentions_predict() {
            return Err(PropError::Clause(format!("assert `{source}` does not refer to a prediction")));
        }
        Ok(Self { ast, source, args })
    }

    pub fn from_ast(ast: Condition) -> Result<Self, PropError> {
        let source = ast.to_string();
        Self::new(ast, source, Vec::new())
    }

    pub fn parse(
        text: &str,
        args: &[Literal],
        schema: &DatasetSchema,
        instance_vars: &[String],
    ) -> Result<Self, PropError> {
        Self::new(parse_condition(text, args, schema, instance_vars)?, text, args.to_vec())
    }
}

/// Parsed property: `(and assumes) => assertion`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropertySpec {
    /// Short name used in reports.
    pub id: String,
    pub assumes: Vec<AssumeClause>,
    pub assertion: AssertClause,
    pub instance_vars: Vec<String>,
}

pub fn build_property(assumes: Vec<AssumeClause>, assertion: AssertClause) -> Result<PropertySpec, PropError> {
    if !assertion.ast.mentions_predict() {
        return Err(PropError::Clause("assertion does not refer to a prediction".into()));
    }
    if let Some(bad) = assumes.iter().find(|a| a.ast.mentions_predict()) {
        return Err(PropError::Clause(format!("assume `{}` refers to a prediction", bad.source)));
    }
    let mut instance_vars: Vec<String> = Vec::new();
    for cond in assumes.iter().map(|a| &a.ast).chain(std::iter::once(&assertion.ast)) {
        for v in cond.instance_vars() {
            if !instance_vars.contains(&v) {
                instance_vars.push(v);
            }
        }
    }
    if instance_vars.is_empty() {
        // `assert true`-style properties still range over one input.
        instance_vars.push("x".to_string());
    }
    Ok(PropertySpec { id: "property".into(), assumes, assertion, instance_vars })
}

impl PropertySpec {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// The conjunction of all assume clauses.
    pub fn assume_condition(&self) -> Condition {
        Condition::all(self.assumes.iter().map(|a| a.ast.clone()).collect())
    }

    pub fn copy_index(&self, var: &str) -> Option<usize> {
        self.instance_vars.iter().position(|v| v == var)
    }

    pub fn assumes_hold(&self, instances: &[Instance]) -> Result<bool, EvalError> {
        let v = Valuation { vars: &self.instance_vars, instances, predictions: &[] };
        for a in &self.assumes {
            if !a.ast.eval(&v)? {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// `assume ∧ ¬assert` under concrete inputs and predictions.
    pub fn is_violated_by(&self, instances: &[Instance], predictions: &[Prediction]) -> Result<bool, EvalError> {
        if !self.assumes_hold(instances)? {
            return Ok(false);
        }
        let v = Valuation { vars: &self.instance_vars, instances, predictions };
        Ok(!self.assertion.ast.eval(&v)?)
    }
}

fn vars(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Individual fairness with respect to sensitive feature `s`: two inputs that
/// differ only in `s` get the same prediction.
pub fn fairness_property(schema: &DatasetSchema, s: usize) -> Result<PropertySpec, PropError> {
    if s >= schema.f_size() {
        return Err(PropError::Parameter(format!("sensitive feature {s} out of range")));
    }
    if schema.is_multilabel() {
        return Err(PropError::Parameter("fairness needs a single-label schema".into()));
    }
    let iv = vars(&["x", "y"]);
    let mut assumes = Vec::with_capacity(schema.f_size());
    for i in 0..schema.f_size() {
        let text = if i == s { "x[i] != y[i]" } else { "x[i] == y[i]" };
        let args = vec![Literal::int(i as i64)];
        assumes.push(AssumeClause::parse(text, &args, schema, &iv)?);
    }
    let assertion = AssertClause::parse("mut.predict(x) == mut.predict(y)", &[], schema, &iv)?;
    Ok(build_property(assumes, assertion)?.with_id(format!("fairness:{}", schema.features[s].name)))
}

/// Concept relationship: `phi` must hold on every prediction.
pub fn concept_property(schema: &DatasetSchema, phi: Condition) -> Result<PropertySpec, PropError> {
    if phi.mentions_feature() {
        return Err(PropError::Parameter("concept formula refers to features".into()));
    }
    let mentioned = phi.instance_vars();
    if mentioned.len() > 1 {
        return Err(PropError::Parameter("concept formula must use one instance variable".into()));
    }
    let check_labels = |c: &Condition| -> bool {
        let mut ok = true;
        walk_exprs(c, &mut |e| {
            if let Expr::Predict { label, .. } = e {
                ok &= *label < schema.l_size();
            }
        });
        ok
    };
    if !check_labels(&phi) {
        return Err(PropError::Parameter("concept formula refers to unknown labels".into()));
    }
    let id = format!("concept:{phi}");
    let assume = AssumeClause::new(Condition::Bool(true), "true", Vec::new())?;
    let mut spec = if phi.mentions_predict() {
        build_property(vec![assume], AssertClause::from_ast(phi)?)?
    } else {
        // A label-free formula (e.g. `true`) still constrains one input.
        let source = phi.to_string();
        PropertySpec {
            id: String::new(),
            assumes: vec![assume],
            assertion: AssertClause { ast: phi, source, args: Vec::new() },
            instance_vars: vec!["x".into()],
        }
    };
    spec.id = id;
    Ok(spec)
}

fn walk_exprs(c: &Condition, f: &mut dyn FnMut(&Expr)) {
    fn walk_expr(e: &Expr, f: &mut dyn FnMut(&Expr)) {
        f(e);
        if let Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) = e {
            walk_expr(a, f);
            walk_expr(b, f);
        }
    }
    match c {
        Condition::Bool(_) => {}
        Condition::Not(c) => walk_exprs(c, f),
        Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| walk_exprs(c, f)),
        Condition::Implies(a, b) => {
            walk_exprs(a, f);
            walk_exprs(b, f);
        }
        Condition::Cmp(_, l, r) => {
            walk_expr(l, f);
            walk_expr(r, f);
        }
    }
}

/// Trojan attack `(T, t, z)`: every input matching the trigger on `T` is
/// predicted `z`.
pub fn trojan_property(
    schema: &DatasetSchema,
    trigger_features: &[usize],
    trigger: &Instance,
    target: &Prediction,
) -> Result<PropertySpec, PropError> {
    if trigger_features.is_empty() {
        return Err(PropError::Parameter("trigger feature set is empty".into()));
    }
    if let Some(&bad) = trigger_features.iter().find(|&&f| f >= schema.f_size()) {
        return Err(PropError::Parameter(format!("trigger feature {bad} out of range")));
    }
    let mut seen = trigger_features.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != trigger_features.len() {
        return Err(PropError::Parameter("trigger feature set repeats a feature".into()));
    }
    if let Err(v) = schema.validate_instance(trigger) {
        return Err(PropError::Parameter(format!("invalid trigger: {}", v[0])));
    }
    if let Err(v) = schema.validate_prediction(target) {
        return Err(PropError::Parameter(format!("invalid target: {}", v[0])));
    }
    let iv = vars(&["x"]);
    let t = Literal::Vector(trigger.0.clone());
    let mut assumes = Vec::with_capacity(trigger_features.len());
    for &f in trigger_features {
        let args = vec![Literal::int(f as i64), t.clone()];
        assumes.push(AssumeClause::parse("x[f] == t[f]", &args, schema, &iv)?);
    }
    let z = Literal::Vector(target.0.iter().map(|&c| rational::int(c)).collect());
    let assertion = AssertClause::parse("mut.predict(x) == z", &[z], schema, &iv)?;
    let names: Vec<&str> = trigger_features.iter().map(|&f| schema.features[f].name.as_str()).collect();
    Ok(build_property(assumes, assertion)?.with_id(format!("trojan:{}", names.join("+"))))
}
