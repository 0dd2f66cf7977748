//! SMT-LIB encoding of surrogates and properties, and the solver driver.
//!
//! Copy `c` (1-based, in instance-variable order) of the surrogate uses
//! `f_<i>_<c>` for feature `i`, `class_<l>_<c>` for label `l`, `s_<j>_<i>_<c>`
//! for the `j`-th tree node on level `i`, and `in_<l>_<i>_<c>` /
//! `out_<l>_<i>_<c>` for neuron `i` of network layer `l` (layer 0 = inputs).

pub mod sexpr;
mod solver;

use std::fmt::Write as _;

use thiserror::Error;

use crate::propdsl::{CmpOp, Condition, Expr, PropertySpec};
use crate::rational::Rational;
use crate::schema::{DatasetSchema, FeatureKind};
use crate::surrogate::{DecisionTree, EdgeCond, MlpSurrogate, OutputMode, Surrogate};
use sexpr::{and, app, atom, eq, int_lit, not, or, real_lit, SExpr};

pub use solver::{block_assignment, solve, solve_text, Assignment, RawOutcome, SolveOutcome, SolverConfig, SOLVER_ENV};

pub const LOGIC: &str = "QF_LIRA";

#[derive(Debug, Error)]
pub enum SmtError {
    #[error("cannot encode property: {0}")]
    Encode(String),
    #[error("solver command `{command}` not found; install z3 or set {env} / --solver", env = SOLVER_ENV)]
    NotFound { command: String },
    #[error("cannot start solver `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("solver failed: {message}\n--- solver output ---\n{output}")]
    Crashed { message: String, output: String },
    #[error("solver rejected the script: {message}\n--- solver output ---\n{output}")]
    Script { message: String, output: String },
    #[error("unparseable solver output: {message}\n--- solver output ---\n{output}")]
    Parse { message: String, output: String },
    #[error("cannot write SMT dump: {0}")]
    Dump(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sort {
    Bool,
    Int,
    Real,
}

impl Sort {
    pub fn name(self) -> &'static str {
        match self {
            Sort::Bool => "Bool",
            Sort::Int => "Int",
            Sort::Real => "Real",
        }
    }
}

/// The variable numbering scheme.
pub struct VarNames;

impl VarNames {
    pub fn feature(i: usize, copy: usize) -> String {
        format!("f_{i}_{copy}")
    }

    pub fn class(label: usize, copy: usize) -> String {
        format!("class_{label}_{copy}")
    }

    pub fn node(j: usize, level: usize, copy: usize) -> String {
        format!("s_{j}_{level}_{copy}")
    }

    pub fn neuron_in(layer: usize, i: usize, copy: usize) -> String {
        format!("in_{layer}_{i}_{copy}")
    }

    pub fn neuron_out(layer: usize, i: usize, copy: usize) -> String {
        format!("out_{layer}_{i}_{copy}")
    }
}

pub fn feature_sort(kind: FeatureKind) -> Sort {
    if kind.is_integral() {
        Sort::Int
    } else {
        Sort::Real
    }
}

/// Which part of the formula an assertion belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Domain,
    Surrogate,
    Property,
    Bound,
    Block,
}

/// Declarations and assertions produced by one encoder.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Encoding {
    pub declarations: Vec<(String, Sort)>,
    pub assertions: Vec<SExpr>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SmtScript {
    pub logic: &'static str,
    pub declarations: Vec<(String, Sort)>,
    pub assertions: Vec<(Section, SExpr)>,
    pub copies: usize,
    pub feature_sorts: Vec<Sort>,
    pub labels: usize,
    /// Variables reported in addition to features and classes.
    pub extra_values: Vec<String>,
}

impl SmtScript {
    /// Declares features and classes for `copies` copies together with
    /// their domain constraints.
    pub fn new(schema: &DatasetSchema, copies: usize) -> Self {
        let mut script = Self {
            logic: LOGIC,
            declarations: Vec::new(),
            assertions: Vec::new(),
            copies,
            feature_sorts: schema.features.iter().map(|f| feature_sort(f.kind)).collect(),
            labels: schema.l_size(),
            extra_values: Vec::new(),
        };
        for c in 1..=copies {
            for (i, f) in schema.features.iter().enumerate() {
                let name = VarNames::feature(i, c);
                let v = atom(&name);
                let constraint = match f.kind {
                    FeatureKind::Categorical => or(f
                        .categories
                        .as_deref()
                        .unwrap_or(&[])
                        .iter()
                        .map(|&code| eq(v.clone(), int_lit(&code.into())))
                        .collect()),
                    FeatureKind::Integer => and(vec![
                        app(">=", vec![v.clone(), int_lit(&f.min.ceil().to_integer())]),
                        app("<=", vec![v.clone(), int_lit(&f.max.floor().to_integer())]),
                    ]),
                    FeatureKind::Continuous => and(vec![
                        app(">=", vec![v.clone(), real_lit(&f.min)]),
                        app("<=", vec![v.clone(), real_lit(&f.max)]),
                    ]),
                };
                script.declarations.push((name, feature_sort(f.kind)));
                script.assertions.push((Section::Domain, constraint));
            }
            for (l, label) in schema.labels.iter().enumerate() {
                let name = VarNames::class(l, c);
                let v = atom(&name);
                let constraint = or(label.classes.iter().map(|&code| eq(v.clone(), int_lit(&code.into()))).collect());
                script.declarations.push((name, Sort::Int));
                script.assertions.push((Section::Domain, constraint));
            }
        }
        script
    }

    pub fn add(&mut self, section: Section, encoding: Encoding) {
        self.declarations.extend(encoding.declarations);
        self.assertions.extend(encoding.assertions.into_iter().map(|a| (section, a)));
    }

    pub fn assert(&mut self, section: Section, term: SExpr) {
        self.assertions.push((section, term));
    }

    pub fn section(&self, section: Section) -> Vec<&SExpr> {
        self.assertions.iter().filter(|(s, _)| *s == section).map(|(_, a)| a).collect()
    }

    /// Copy of this script with extra blocking clauses.
    pub fn with_blocks(&self, blocks: &[SExpr]) -> Self {
        let mut out = self.clone();
        out.assertions.extend(blocks.iter().cloned().map(|b| (Section::Block, b)));
        out
    }

    pub fn value_vars(&self) -> Vec<String> {
        let mut vars = Vec::new();
        for c in 1..=self.copies {
            vars.extend((0..self.feature_sorts.len()).map(|i| VarNames::feature(i, c)));
            vars.extend((0..self.labels).map(|l| VarNames::class(l, c)));
        }
        vars.extend(self.extra_values.iter().cloned());
        vars
    }

    /// The complete SMT-LIB document, ending in `(check-sat)` and `(get-value ...)`.
    pub fn text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "(set-logic {})", self.logic);
        for (name, sort) in &self.declarations {
            let _ = writeln!(out, "(declare-const {name} {})", sort.name());
        }
        for (_, a) in &self.assertions {
            let _ = writeln!(out, "(assert {a})");
        }
        out.push_str("(check-sat)\n");
        let _ = writeln!(out, "(get-value ({}))", self.value_vars().join(" "));
        out
    }
}

#[derive(Clone, Debug)]
struct Term {
    e: SExpr,
    sort: Sort,
}

fn real(t: Term) -> SExpr {
    match t.sort {
        Sort::Int => app("to_real", vec![t.e]),
        _ => t.e,
    }
}

fn lit(value: &Rational) -> Term {
    if value.is_integer() {
        Term { e: int_lit(&value.to_integer()), sort: Sort::Int }
    } else {
        Term { e: real_lit(value), sort: Sort::Real }
    }
}

fn arith(op: &str, a: Term, b: Term) -> Term {
    if a.sort == Sort::Int && b.sort == Sort::Int {
        Term { e: app(op, vec![a.e, b.e]), sort: Sort::Int }
    } else {
        Term { e: app(op, vec![real(a), real(b)]), sort: Sort::Real }
    }
}

fn compare(op: CmpOp, a: Term, b: Term) -> SExpr {
    let (a, b) = if a.sort == Sort::Int && b.sort == Sort::Int { (a.e, b.e) } else { (real(a), real(b)) };
    match op {
        CmpOp::Eq => eq(a, b),
        CmpOp::Ne => not(eq(a, b)),
        CmpOp::Lt => app("<", vec![a, b]),
        CmpOp::Le => app("<=", vec![a, b]),
        CmpOp::Gt => app(">", vec![a, b]),
        CmpOp::Ge => app(">=", vec![a, b]),
    }
}

fn feature_term(schema: &DatasetSchema, i: usize, copy: usize) -> Term {
    Term { e: atom(VarNames::feature(i, copy)), sort: feature_sort(schema.features[i].kind) }
}

fn edge_condition(cond: &EdgeCond, copy: usize, schema: &DatasetSchema) -> SExpr {
    let f = feature_term(schema, cond.feature(), copy);
    let t = lit(cond.threshold());
    match cond {
        EdgeCond::Le { .. } => compare(CmpOp::Le, f, t),
        EdgeCond::Gt { .. } => compare(CmpOp::Gt, f, t),
        EdgeCond::Eq { .. } => compare(CmpOp::Eq, f, t),
        EdgeCond::Ne { .. } => compare(CmpOp::Ne, f, t),
    }
}

/// Root asserted true; every other node equivalent to its predecessor and
/// edge condition; leaves fix every class variable.
pub fn encode_decision_tree(tree: &DecisionTree, copy: usize, schema: &DatasetSchema) -> Encoding {
    let mut enc = Encoding::default();
    let name = |id: usize| {
        let n = &tree.nodes[id];
        VarNames::node(n.index, n.level, copy)
    };
    for (id, node) in tree.nodes.iter().enumerate() {
        let s = name(id);
        enc.declarations.push((s.clone(), Sort::Bool));
        match (node.parent, &node.edge) {
            (Some(p), Some(edge)) => {
                let pre = atom(name(p));
                let cond = edge_condition(edge, copy, schema);
                enc.assertions.push(or(vec![
                    and(vec![pre.clone(), cond.clone(), atom(&s)]),
                    and(vec![or(vec![not(pre), not(cond)]), not(atom(&s))]),
                ]));
            }
            _ => enc.assertions.push(atom(&s)),
        }
        if let Some(z) = &node.prediction {
            let classes =
                z.0.iter().enumerate().map(|(l, &code)| eq(atom(VarNames::class(l, copy)), int_lit(&code.into())));
            enc.assertions.push(app("=>", vec![atom(&s), and(classes.collect())]));
        }
    }
    enc
}

/// Weighted-sum and ReLU constraints per hidden layer, weighted sum for the
/// output layer, and the argmax or threshold decision.
/// Interval of every pre-activation value over the feature domains.
pub fn neuron_bounds(net: &MlpSurrogate, schema: &DatasetSchema) -> Vec<Vec<(Rational, Rational)>> {
    let zero = Rational::from_integer(0.into());
    let mut current: Vec<(Rational, Rational)> = schema
        .features
        .iter()
        .map(|f| match f.discrete_values() {
            Some(values) if !values.is_empty() => {
                (values.iter().min().unwrap().clone(), values.iter().max().unwrap().clone())
            }
            _ => (f.min.clone(), f.max.clone()),
        })
        .collect();
    let mut out = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let pre: Vec<(Rational, Rational)> = (0..layer.outputs())
            .map(|j| {
                let mut lo = layer.bias(j);
                let mut hi = lo.clone();
                for (i, (a, b)) in current.iter().enumerate() {
                    let w = layer.weight(j, i);
                    if w > zero {
                        lo += &w * a;
                        hi += &w * b;
                    } else {
                        lo += &w * b;
                        hi += &w * a;
                    }
                }
                (lo, hi)
            })
            .collect();
        current = pre.iter().map(|(lo, hi)| (lo.clone().max(zero.clone()), hi.clone().max(zero.clone()))).collect();
        out.push(pre);
    }
    out
}

pub fn encode_mlp(net: &MlpSurrogate, copy: usize, schema: &DatasetSchema) -> Encoding {
    let mut enc = Encoding::default();
    for i in 0..net.input_size() {
        let out = VarNames::neuron_out(0, i, copy);
        enc.declarations.push((out.clone(), Sort::Real));
        enc.assertions.push(eq(atom(out), real(feature_term(schema, i, copy))));
    }
    let bounds = neuron_bounds(net, schema);
    let last = net.layers.len();
    for (idx, layer) in net.layers.iter().enumerate() {
        let l = idx + 1;
        for j in 0..layer.outputs() {
            let input = VarNames::neuron_in(l, j, copy);
            enc.declarations.push((input.clone(), Sort::Real));
            let mut sum = vec![real_lit(&layer.bias(j))];
            for i in 0..layer.inputs() {
                if layer.weights[j][i] != 0 {
                    sum.push(app("*", vec![real_lit(&layer.weight(j, i)), atom(VarNames::neuron_out(l - 1, i, copy))]));
                }
            }
            let rhs = if sum.len() == 1 { sum.pop().unwrap() } else { app("+", sum) };
            enc.assertions.push(eq(atom(&input), rhs));
            // Implied by the domain constraints; spelled out so the solver
            // can fix stable ReLUs without case splits.
            let (lo, hi) = &bounds[idx][j];
            enc.assertions.push(app("<=", vec![real_lit(lo), atom(&input), real_lit(hi)]));
            if l < last {
                let out = VarNames::neuron_out(l, j, copy);
                enc.declarations.push((out.clone(), Sort::Real));
                let zero = real_lit(&Rational::from_integer(0.into()));
                enc.assertions.push(or(vec![
                    and(vec![app("<", vec![atom(&input), zero.clone()]), eq(atom(&out), zero.clone())]),
                    and(vec![app(">=", vec![atom(&input), zero]), eq(atom(&out), atom(&input))]),
                ]));
            }
        }
    }
    let output = |c: usize| atom(VarNames::neuron_in(last, c, copy));
    match &net.mode {
        OutputMode::Argmax { classes } => {
            let class = atom(VarNames::class(0, copy));
            let options = (0..classes.len())
                .map(|c| {
                    let mut parts: Vec<SExpr> = (0..classes.len())
                        .filter(|&o| o != c)
                        .map(|o| app(">=", vec![output(c), output(o)]))
                        .collect();
                    parts.push(eq(class.clone(), int_lit(&classes[c].into())));
                    and(parts)
                })
                .collect();
            enc.assertions.push(or(options));
        }
        OutputMode::Threshold { .. } => {
            let th = real_lit(&net.threshold().expect("threshold mode"));
            for l in 0..net.layers[last - 1].outputs() {
                let class = atom(VarNames::class(l, copy));
                enc.assertions.push(or(vec![
                    and(vec![app(">=", vec![output(l), th.clone()]), eq(class.clone(), atom("1"))]),
                    and(vec![app("<", vec![output(l), th.clone()]), eq(class, atom("0"))]),
                ]));
            }
        }
    }
    enc
}

pub fn encode_surrogate(surrogate: &Surrogate, copy: usize, schema: &DatasetSchema) -> Encoding {
    match surrogate {
        Surrogate::Dt(t) => encode_decision_tree(t, copy, schema),
        Surrogate::Nn(n) => encode_mlp(n, copy, schema),
    }
}

struct Translator<'a> {
    spec: &'a PropertySpec,
    schema: &'a DatasetSchema,
}

impl Translator<'_> {
    fn copy(&self, var: &str) -> Result<usize, SmtError> {
        self.spec
            .copy_index(var)
            .map(|i| i + 1)
            .ok_or_else(|| SmtError::Encode(format!("unknown instance variable `{var}`")))
    }

    fn expr(&self, e: &Expr) -> Result<Term, SmtError> {
        Ok(match e {
            Expr::Lit(v) => lit(v),
            Expr::Feature { var, index } => {
                if *index >= self.schema.f_size() {
                    return Err(SmtError::Encode(format!("feature index {index} out of range")));
                }
                feature_term(self.schema, *index, self.copy(var)?)
            }
            Expr::Predict { var, label } => {
                if *label >= self.schema.l_size() {
                    return Err(SmtError::Encode(format!("label index {label} out of range")));
                }
                Term { e: atom(VarNames::class(*label, self.copy(var)?)), sort: Sort::Int }
            }
            Expr::Add(a, b) => arith("+", self.expr(a)?, self.expr(b)?),
            Expr::Sub(a, b) => arith("-", self.expr(a)?, self.expr(b)?),
            Expr::Mul(a, b) => arith("*", self.expr(a)?, self.expr(b)?),
        })
    }

    fn cond(&self, c: &Condition) -> Result<SExpr, SmtError> {
        Ok(match c {
            Condition::Bool(b) => atom(if *b { "true" } else { "false" }),
            Condition::Not(inner) => not(self.cond(inner)?),
            Condition::And(parts) => and(parts.iter().map(|p| self.cond(p)).collect::<Result<_, _>>()?),
            Condition::Or(parts) => or(parts.iter().map(|p| self.cond(p)).collect::<Result<_, _>>()?),
            Condition::Implies(a, b) => app("=>", vec![self.cond(a)?, self.cond(b)?]),
            Condition::Cmp(op, a, b) => compare(*op, self.expr(a)?, self.expr(b)?),
        })
    }
}

/// Translates a property condition with each instance variable mapped to
/// its copy index.
pub fn translate_condition(spec: &PropertySpec, schema: &DatasetSchema, c: &Condition) -> Result<SExpr, SmtError> {
    Translator { spec, schema }.cond(c)
}

/// `assume ∧ ¬assert` conjoined with one surrogate copy per instance
/// variable; SAT exactly when the property fails on the surrogate.
pub fn encode_property(
    spec: &PropertySpec,
    schema: &DatasetSchema,
    surrogate: &Surrogate,
    bounds: Option<&[(Rational, Rational)]>,
) -> Result<SmtScript, SmtError> {
    let copies = spec.instance_vars.len();
    let mut script = SmtScript::new(schema, copies);
    for c in 1..=copies {
        script.add(Section::Surrogate, encode_surrogate(surrogate, c, schema));
    }
    let t = Translator { spec, schema };
    for a in &spec.assumes {
        script.assert(Section::Property, t.cond(&a.ast)?);
    }
    script.assert(Section::Property, not(t.cond(&spec.assertion.ast)?));
    if let Some(bounds) = bounds {
        if bounds.len() != schema.f_size() {
            return Err(SmtError::Encode(format!("{} bounds for {} features", bounds.len(), schema.f_size())));
        }
        for c in 1..=copies {
            for (i, (lo, hi)) in bounds.iter().enumerate() {
                let f = feature_term(schema, i, c);
                script.assert(Section::Bound, compare(CmpOp::Ge, f.clone(), lit(lo)));
                script.assert(Section::Bound, compare(CmpOp::Le, f, lit(hi)));
            }
        }
    }
    Ok(script)
}

#[cfg(test)]
mod tests;
