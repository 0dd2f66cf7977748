use std::fmt;

use crate::rational::{format_rational, Rational};
use crate::schema::{Instance, Prediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

/// Linear arithmetic over feature values and predicted class codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Lit(Rational),
    /// Value of feature `index` of instance variable `var`.
    Feature { var: String, index: usize },
    /// Class code predicted for label `label` on instance variable `var`.
    Predict { var: String, label: usize },
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
}

/// Fully resolved condition: no free identifiers remain.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Condition {
    Bool(bool),
    Not(Box<Condition>),
    And(Vec<Condition>),
    Or(Vec<Condition>),
    Implies(Box<Condition>, Box<Condition>),
    Cmp(CmpOp, Expr, Expr),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("instance variable `{0}` has no value")]
    UnboundVar(String),
    #[error("feature {index} missing on `{var}`")]
    MissingFeature { var: String, index: usize },
    #[error("no prediction available for `{var}` label {label}")]
    MissingPrediction { var: String, label: usize },
}

/// Concrete values for the instance variables of a property.
#[derive(Clone, Copy, Debug)]
pub struct Valuation<'a> {
    pub vars: &'a [String],
    pub instances: &'a [Instance],
    /// May be empty when only feature-level conditions are evaluated.
    pub predictions: &'a [Prediction],
}

impl<'a> Valuation<'a> {
    fn slot(&self, var: &str) -> Result<usize, EvalError> {
        self.vars.iter().position(|v| v == var).ok_or_else(|| EvalError::UnboundVar(var.to_string()))
    }
}

impl Expr {
    pub fn feature(var: &str, index: usize) -> Self {
        Expr::Feature { var: var.to_string(), index }
    }

    pub fn predict(var: &str, label: usize) -> Self {
        Expr::Predict { var: var.to_string(), label }
    }

    pub fn lit(value: Rational) -> Self {
        Expr::Lit(value)
    }

    pub fn int(value: i64) -> Self {
        Expr::Lit(crate::rational::int(value))
    }

    /// True when the expression mentions no feature or prediction.
    pub fn is_ground(&self) -> bool {
        match self {
            Expr::Lit(_) => true,
            Expr::Feature { .. } | Expr::Predict { .. } => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.is_ground() && b.is_ground(),
        }
    }

    pub fn mentions_predict(&self) -> bool {
        match self {
            Expr::Predict { .. } => true,
            Expr::Lit(_) | Expr::Feature { .. } => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.mentions_predict() || b.mentions_predict(),
        }
    }

    pub fn mentions_feature(&self) -> bool {
        match self {
            Expr::Feature { .. } => true,
            Expr::Lit(_) | Expr::Predict { .. } => false,
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => a.mentions_feature() || b.mentions_feature(),
        }
    }

    pub(crate) fn visit_vars<'s>(&'s self, out: &mut Vec<&'s str>) {
        match self {
            Expr::Lit(_) => {}
            Expr::Feature { var, .. } | Expr::Predict { var, .. } => out.push(var),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) => {
                a.visit_vars(out);
                b.visit_vars(out);
            }
        }
    }

    pub fn eval(&self, v: &Valuation) -> Result<Rational, EvalError> {
        Ok(match self {
            Expr::Lit(r) => r.clone(),
            Expr::Feature { var, index } => {
                let slot = v.slot(var)?;
                v.instances
                    .get(slot)
                    .and_then(|x| x.0.get(*index))
                    .cloned()
                    .ok_or_else(|| EvalError::MissingFeature { var: var.clone(), index: *index })?
            }
            Expr::Predict { var, label } => {
                let slot = v.slot(var)?;
                let class = v
                    .predictions
                    .get(slot)
                    .and_then(|z| z.0.get(*label))
                    .ok_or_else(|| EvalError::MissingPrediction { var: var.clone(), label: *label })?;
                crate::rational::int(*class)
            }
            Expr::Add(a, b) => a.eval(v)? + b.eval(v)?,
            Expr::Sub(a, b) => a.eval(v)? - b.eval(v)?,
            Expr::Mul(a, b) => a.eval(v)? * b.eval(v)?,
        })
    }
}

impl Condition {
    pub fn cmp(op: CmpOp, lhs: Expr, rhs: Expr) -> Self {
        Condition::Cmp(op, lhs, rhs)
    }

    pub fn not(inner: Condition) -> Self {
        Condition::Not(Box::new(inner))
    }

    pub fn implies(lhs: Condition, rhs: Condition) -> Self {
        Condition::Implies(Box::new(lhs), Box::new(rhs))
    }

    /// Conjunction that collapses the trivial cases.
    pub fn all(mut parts: Vec<Condition>) -> Self {
        match parts.len() {
            0 => Condition::Bool(true),
            1 => parts.pop().unwrap_or(Condition::Bool(true)),
            _ => Condition::And(parts),
        }
    }

    pub fn mentions_predict(&self) -> bool {
        self.any_expr(&|e| e.mentions_predict())
    }

    pub fn mentions_feature(&self) -> bool {
        self.any_expr(&|e| e.mentions_feature())
    }

    fn any_expr(&self, f: &dyn Fn(&Expr) -> bool) -> bool {
        match self {
            Condition::Bool(_) => false,
            Condition::Not(c) => c.any_expr(f),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().any(|c| c.any_expr(f)),
            Condition::Implies(a, b) => a.any_expr(f) || b.any_expr(f),
            Condition::Cmp(_, l, r) => f(l) || f(r),
        }
    }

    /// Instance variables in first-occurrence order.
    pub fn instance_vars(&self) -> Vec<String> {
        let mut raw = Vec::new();
        self.visit_vars(&mut raw);
        let mut out: Vec<String> = Vec::new();
        for v in raw {
            if !out.iter().any(|o| o == v) {
                out.push(v.to_string());
            }
        }
        out
    }

    pub(crate) fn visit_vars<'s>(&'s self, out: &mut Vec<&'s str>) {
        match self {
            Condition::Bool(_) => {}
            Condition::Not(c) => c.visit_vars(out),
            Condition::And(cs) | Condition::Or(cs) => cs.iter().for_each(|c| c.visit_vars(out)),
            Condition::Implies(a, b) => {
                a.visit_vars(out);
                b.visit_vars(out);
            }
            Condition::Cmp(_, l, r) => {
                l.visit_vars(out);
                r.visit_vars(out);
            }
        }
    }

    pub fn eval(&self, v: &Valuation) -> Result<bool, EvalError> {
        Ok(match self {
            Condition::Bool(b) => *b,
            Condition::Not(c) => !c.eval(v)?,
            Condition::And(cs) => {
                for c in cs {
                    if !c.eval(v)? {
                        return Ok(false);
                    }
                }
                true
            }
            Condition::Or(cs) => {
                for c in cs {
                    if c.eval(v)? {
                        return Ok(true);
                    }
                }
                false
            }
            Condition::Implies(a, b) => !a.eval(v)? || b.eval(v)?,
            Condition::Cmp(op, l, r) => op.holds(&l.eval(v)?, &r.eval(v)?),
        })
    }
}

// Printing produces text that parses back to the same tree.

fn write_operand(f: &mut fmt::Formatter<'_>, e: &Expr, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(r) => f.write_str(&format_rational(r)),
            Expr::Feature { var, index } => write!(f, "{var}[{index}]"),
            Expr::Predict { var, label } => write!(f, "predict({var})[{label}]"),
            Expr::Add(a, b) | Expr::Sub(a, b) => {
                let op = if matches!(self, Expr::Add(..)) { "+" } else { "-" };
                write_operand(f, a, false)?;
                write!(f, " {op} ")?;
                write_operand(f, b, matches!(**b, Expr::Add(..) | Expr::Sub(..)))
            }
            Expr::Mul(a, b) => {
                write_operand(f, a, matches!(**a, Expr::Add(..) | Expr::Sub(..)))?;
                f.write_str(" * ")?;
                write_operand(f, b, matches!(**b, Expr::Add(..) | Expr::Sub(..) | Expr::Mul(..)))
            }
        }
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, c: &Condition) -> fmt::Result {
    match c {
        Condition::Bool(_) | Condition::Cmp(..) => write!(f, "{c}"),
        _ => write!(f, "({c})"),
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Bool(b) => write!(f, "{b}"),
            Condition::Not(c) => {
                f.write_str("not ")?;
                write_child(f, c)
            }
            Condition::And(cs) | Condition::Or(cs) => {
                let sep = if matches!(self, Condition::And(_)) { " and " } else { " or " };
                for (i, c) in cs.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    write_child(f, c)?;
                }
                Ok(())
            }
            Condition::Implies(a, b) => {
                write_child(f, a)?;
                f.write_str(" => ")?;
                write_child(f, b)
            }
            Condition::Cmp(op, l, r) => write!(f, "{l} {} {r}", op.symbol()),
        }
    }
}
