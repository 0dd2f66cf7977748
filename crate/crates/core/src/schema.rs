//! Feature/label space of the model under test and the XML data-format file.

use std::collections::HashSet;
use std::fmt;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{self, format_rational, parse_rational, Rational};

/// Resolution of continuous draws: values land on a `1/CONTINUOUS_STEPS` grid
/// of the feature range.
const CONTINUOUS_STEPS: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("{path}: duplicate name `{name}`")]
    DuplicateName { path: String, name: String },
    #[error("{path}: feature `{name}` has min {min} > max {max}")]
    EmptyRange { path: String, name: String, min: String, max: String },
    #[error("{path}: label `{name}` needs at least 2 classes")]
    TooFewClasses { path: String, name: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Invalid { path: path.to_string(), message: message.into() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Categorical,
    Integer,
    Continuous,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Categorical => "categorical",
            FeatureKind::Integer => "integer",
            FeatureKind::Continuous => "continuous",
        }
    }

    /// Categorical and integer features take integral values only.
    pub fn is_integral(self) -> bool {
        !matches!(self, FeatureKind::Continuous)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    pub min: Rational,
    pub max: Rational,
    /// Category codes, categorical features only.
    pub categories: Option<Vec<i64>>,
    /// Original category strings when the XML used non-numeric categories.
    pub category_names: Option<Vec<String>>,
}

impl FeatureSpec {
    pub fn continuous(name: &str, min: Rational, max: Rational) -> Self {
        Self { name: name.into(), kind: FeatureKind::Continuous, min, max, categories: None, category_names: None }
    }

    pub fn integer(name: &str, min: i64, max: i64) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Integer,
            min: rational::int(min),
            max: rational::int(max),
            categories: None,
            category_names: None,
        }
    }

    pub fn categorical(name: &str, codes: &[i64]) -> Self {
        let min = codes.iter().copied().min().unwrap_or(0);
        let max = codes.iter().copied().max().unwrap_or(0);
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical,
            min: rational::int(min),
            max: rational::int(max),
            categories: Some(codes.to_vec()),
            category_names: None,
        }
    }

    pub fn binary(name: &str) -> Self {
        Self::categorical(name, &[0, 1])
    }

    /// Every admissible value, for categorical and integer features.
    pub fn discrete_values(&self) -> Option<Vec<Rational>> {
        match self.kind {
            FeatureKind::Categorical => {
                Some(self.categories.as_deref().unwrap_or(&[]).iter().map(|&c| rational::int(c)).collect())
            }
            FeatureKind::Integer => {
                let lo = self.min.ceil().to_integer();
                let hi = self.max.floor().to_integer();
                let mut out = Vec::new();
                let mut v = lo;
                while v <= hi {
                    out.push(Rational::from_integer(v.clone()));
                    v += 1;
                }
                Some(out)
            }
            FeatureKind::Continuous => None,
        }
    }

    pub fn admits(&self, value: &Rational) -> bool {
        self.violation(value).is_none()
    }

    fn violation(&self, value: &Rational) -> Option<Violation> {
        match self.kind {
            FeatureKind::Categorical => {
                let ok = value.is_integer()
                    && value
                        .to_integer()
                        .to_i64()
                        .is_some_and(|v| self.categories.as_deref().unwrap_or(&[]).contains(&v));
                (!ok).then(|| Violation::NotACategory { feature: self.name.clone(), value: format_rational(value) })
            }
            FeatureKind::Integer if !value.is_integer() => {
                Some(Violation::NotIntegral { feature: self.name.clone(), value: format_rational(value) })
            }
            _ if value < &self.min || value > &self.max => {
                Some(Violation::OutOfRange { feature: self.name.clone(), value: format_rational(value) })
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSpec {
    pub name: String,
    pub classes: Vec<i64>,
    pub class_names: Option<Vec<String>>,
}

impl LabelSpec {
    pub fn new(name: &str, classes: &[i64]) -> Self {
        Self { name: name.into(), classes: classes.to_vec(), class_names: None }
    }

    pub fn boolean(name: &str) -> Self {
        Self::new(name, &[0, 1])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSchema {
    pub features: Vec<FeatureSpec>,
    pub labels: Vec<LabelSpec>,
}

/// A point of the input space, positionally aligned with the schema features.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Instance(#[serde(with = "rational::serde_rational_vec")] pub Vec<Rational>);

impl Instance {
    pub fn from_ints(values: &[i64]) -> Self {
        Instance(values.iter().map(|&v| rational::int(v)).collect())
    }

    pub fn values(&self) -> &[Rational] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(rational::to_f64).collect()
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(format_rational).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Class codes, positionally aligned with the schema labels.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Prediction(pub Vec<i64>);

impl Prediction {
    pub fn single(class: i64) -> Self {
        Prediction(vec![class])
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    LengthMismatch { expected: usize, found: usize },
    OutOfRange { feature: String, value: String },
    NotIntegral { feature: String, value: String },
    NotACategory { feature: String, value: String },
    UnknownClass { label: String, class: i64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected} values, found {found}")
            }
            Violation::OutOfRange { feature, value } => write!(f, "feature `{feature}`: {value} out of range"),
            Violation::NotIntegral { feature, value } => write!(f, "feature `{feature}`: {value} is not an integer"),
            Violation::NotACategory { feature, value } => {
                write!(f, "feature `{feature}`: {value} is not a category code")
            }
            Violation::UnknownClass { label, class } => write!(f, "label `{label}`: unknown class {class}"),
        }
    }
}

impl DatasetSchema {
    /// Builds a schema, checking every structural invariant.
    pub fn new(features: Vec<FeatureSpec>, labels: Vec<LabelSpec>) -> Result<Self, SchemaError> {
        let schema = Self { features, labels };
        schema.check()?;
        Ok(schema)
    }

    fn check(&self) -> Result<(), SchemaError> {
        if self.features.is_empty() {
            return Err(invalid("/schema", "at least one feature is required"));
        }
        if self.labels.is_empty() {
            return Err(invalid("/schema", "at least one label is required"));
        }
        let mut names = HashSet::new();
        for (i, f) in self.features.iter().enumerate() {
            let path = format!("/schema/feature[{}]", i + 1);
            if !is_identifier(&f.name) {
                return Err(invalid(&path, format!("`{}` is not an identifier", f.name)));
            }
            if !names.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName { path, name: f.name.clone() });
            }
            if f.min > f.max {
                return Err(SchemaError::EmptyRange {
                    path,
                    name: f.name.clone(),
                    min: format_rational(&f.min),
                    max: format_rational(&f.max),
                });
            }
            match f.kind {
                FeatureKind::Categorical => {
                    let cats = f.categories.as_deref().unwrap_or(&[]);
                    if cats.len() < 2 {
                        return Err(invalid(&path, format!("categorical feature `{}` needs at least 2 categories", f.name)));
                    }
                    if cats.iter().collect::<HashSet<_>>().len() != cats.len() {
                        return Err(invalid(&path, format!("categorical feature `{}` repeats a category", f.name)));
                    }
                    if cats.iter().any(|&c| rational::int(c) < f.min || rational::int(c) > f.max) {
                        return Err(invalid(&path, format!("categories of `{}` fall outside [min, max]", f.name)));
                    }
                }
                FeatureKind::Integer => {
                    if f.min.ceil() > f.max.floor() {
                        return Err(invalid(&path, format!("integer feature `{}` has no integer in range", f.name)));
                    }
                }
                FeatureKind::Continuous => {}
            }
            if f.kind != FeatureKind::Categorical && f.categories.is_some() {
                return Err(invalid(&path, "categories are only allowed on categorical features"));
            }
        }
        for (i, l) in self.labels.iter().enumerate() {
            let path = format!("/schema/label[{}]", i + 1);
            if !is_identifier(&l.name) {
                return Err(invalid(&path, format!("`{}` is not an identifier", l.name)));
            }
            if !names.insert(l.name.as_str()) {
                return Err(SchemaError::DuplicateName { path, name: l.name.clone() });
            }
            if l.classes.iter().collect::<HashSet<_>>().len() < 2 {
                return Err(SchemaError::TooFewClasses { path, name: l.name.clone() });
            }
            if l.classes.iter().collect::<HashSet<_>>().len() != l.classes.len() {
                return Err(invalid(&path, format!("label `{}` repeats a class", l.name)));
            }
        }
        if self.labels.len() > 1 {
            for (i, l) in self.labels.iter().enumerate() {
                let mut classes = l.classes.clone();
                classes.sort_unstable();
                if classes != [0, 1] {
                    return Err(invalid(
                        &format!("/schema/label[{}]", i + 1),
                        format!("multilabel schemas need boolean classes 0,1 on label `{}`", l.name),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of features (`f_size`).
    pub fn f_size(&self) -> usize {
        self.features.len()
    }

    /// Number of labels (`l_size`).
    pub fn l_size(&self) -> usize {
        self.labels.len()
    }

    pub fn is_multilabel(&self) -> bool {
        self.labels.len() > 1
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    pub fn is_fully_discrete(&self) -> bool {
        self.features.iter().all(|f| f.kind.is_integral())
    }

    /// All instances of a fully-discrete schema, in lexicographic order of
    /// the admissible values. `None` for schemas with continuous features or
    /// more than `limit` points.
    pub fn enumerate_instances(&self, limit: usize) -> Option<Vec<Instance>> {
        let domains: Vec<Vec<Rational>> =
            self.features.iter().map(|f| f.discrete_values()).collect::<Option<_>>()?;
        let mut total: usize = 1;
        for d in &domains {
            total = total.checked_mul(d.len())?;
            if total > limit {
                return None;
            }
        }
        let mut out = Vec::with_capacity(total);
        let mut idx = vec![0usize; domains.len()];
        loop {
            out.push(Instance(idx.iter().zip(&domains).map(|(&i, d)| d[i].clone()).collect()));
            let mut pos = domains.len();
            loop {
                if pos == 0 {
                    return Some(out);
                }
                pos -= 1;
                idx[pos] += 1;
                if idx[pos] < domains[pos].len() {
                    break;
                }
                idx[pos] = 0;
            }
        }
    }

    /// Draws a uniformly random valid instance.
    pub fn random_instance<R: Rng + ?Sized>(&self, rng: &mut R) -> Instance {
        Instance(self.features.iter().map(|f| random_value(f, rng)).collect())
    }

    pub fn validate_instance(&self, x: &Instance) -> Result<(), Vec<Violation>> {
        if x.0.len() != self.features.len() {
            return Err(vec![Violation::LengthMismatch { expected: self.features.len(), found: x.0.len() }]);
        }
        let violations: Vec<Violation> =
            self.features.iter().zip(&x.0).filter_map(|(f, v)| f.violation(v)).collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    pub fn validate_prediction(&self, z: &Prediction) -> Result<(), Vec<Violation>> {
        if z.0.len() != self.labels.len() {
            return Err(vec![Violation::LengthMismatch { expected: self.labels.len(), found: z.0.len() }]);
        }
        let violations: Vec<Violation> = self
            .labels
            .iter()
            .zip(&z.0)
            .filter(|(l, c)| !l.classes.contains(c))
            .map(|(l, &c)| Violation::UnknownClass { label: l.name.clone(), class: c })
            .collect();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(violations)
        }
    }

    /// Parses the XML data-format document.
    pub fn parse_xml(text: &str) -> Result<Self, SchemaError> {
        let doc = roxmltree::Document::parse(text).map_err(|e| SchemaError::Xml(e.to_string()))?;
        let root = doc.root_element();
        if root.tag_name().name() != "schema" {
            return Err(invalid("/", format!("expected <schema> root, found <{}>", root.tag_name().name())));
        }
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for node in root.children().filter(|n| n.is_element()) {
            match node.tag_name().name() {
                "feature" => {
                    let path = format!("/schema/feature[{}]", features.len() + 1);
                    features.push(parse_feature(&node, &path)?);
                }
                "label" => {
                    let path = format!("/schema/label[{}]", labels.len() + 1);
                    labels.push(parse_label(&node, &path)?);
                }
                other => return Err(invalid("/schema", format!("unexpected element <{other}>"))),
            }
        }
        Self::new(features, labels)
    }

    /// Serializes back to the XML data-format document.
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<schema>\n");
        for f in &self.features {
            out.push_str(&format!("  <feature name=\"{}\" kind=\"{}\"", f.name, f.kind.as_str()));
            match (&f.categories, &f.category_names) {
                (_, Some(names)) => out.push_str(&format!(" categories=\"{}\"", names.join(","))),
                (Some(codes), None) => out.push_str(&format!(" categories=\"{}\"", join_codes(codes))),
                _ => {}
            }
            out.push_str(&format!(" min=\"{}\" max=\"{}\"/>\n", format_rational(&f.min), format_rational(&f.max)));
        }
        for l in &self.labels {
            let classes = match &l.class_names {
                Some(names) => names.join(","),
                None => join_codes(&l.classes),
            };
            out.push_str(&format!("  <label name=\"{}\" classes=\"{}\"/>\n", l.name, classes));
        }
        out.push_str("</schema>\n");
        out
    }
}

fn join_codes(codes: &[i64]) -> String {
    codes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Comma-separated code list; non-numeric entries map every entry to its
/// declaration index.
fn parse_codes(text: &str, path: &str, what: &str) -> Result<(Vec<i64>, Option<Vec<String>>), SchemaError> {
    let items: Vec<String> = text.split(',').map(|s| s.trim().to_string()).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(invalid(path, format!("empty entry in {what} list `{text}`")));
    }
    match items.iter().map(|s| s.parse::<i64>()).collect::<Result<Vec<_>, _>>() {
        Ok(codes) => Ok((codes, None)),
        Err(_) => Ok(((0..items.len() as i64).collect(), Some(items))),
    }
}

fn parse_bound(node: &roxmltree::Node, attr: &str, path: &str) -> Result<Option<Rational>, SchemaError> {
    node.attribute(attr)
        .map(|text| parse_rational(text).ok_or_else(|| invalid(path, format!("{attr}=\"{text}\" is not a number"))))
        .transpose()
}

fn parse_feature(node: &roxmltree::Node, path: &str) -> Result<FeatureSpec, SchemaError> {
    let name = node.attribute("name").ok_or_else(|| invalid(path, "missing name attribute"))?.to_string();
    let kind = match node.attribute("kind") {
        None | Some("continuous") => FeatureKind::Continuous,
        Some("integer") => FeatureKind::Integer,
        Some("categorical") => FeatureKind::Categorical,
        Some(other) => return Err(invalid(path, format!("unknown kind `{other}`"))),
    };
    let min = parse_bound(node, "min", path)?;
    let max = parse_bound(node, "max", path)?;
    let (categories, category_names) = match node.attribute("categories") {
        Some(text) => {
            let (codes, names) = parse_codes(text, path, "category")?;
            (Some(codes), names)
        }
        None => (None, None),
    };
    let (min, max) = match kind {
        FeatureKind::Continuous => (min.unwrap_or_else(Rational::zero), max.unwrap_or_else(|| rational::int(1))),
        FeatureKind::Integer => match (min, max) {
            (Some(lo), Some(hi)) => (lo, hi),
            _ => return Err(invalid(path, format!("integer feature `{name}` needs min and max"))),
        },
        FeatureKind::Categorical => {
            let codes = categories
                .as_deref()
                .ok_or_else(|| invalid(path, format!("categorical feature `{name}` needs categories")))?;
            let lo = codes.iter().min().map(|&c| rational::int(c)).unwrap_or_else(Rational::zero);
            let hi = codes.iter().max().map(|&c| rational::int(c)).unwrap_or_else(Rational::zero);
            (min.unwrap_or(lo), max.unwrap_or(hi))
        }
    };
    Ok(FeatureSpec { name, kind, min, max, categories, category_names })
}

fn parse_label(node: &roxmltree::Node, path: &str) -> Result<LabelSpec, SchemaError> {
    let name = node.attribute("name").ok_or_else(|| invalid(path, "missing name attribute"))?.to_string();
    let text = node.attribute("classes").ok_or_else(|| invalid(path, format!("label `{name}` needs classes")))?;
    let (classes, class_names) = parse_codes(text, path, "class")?;
    Ok(LabelSpec { name, classes, class_names })
}

fn random_value<R: Rng + ?Sized>(f: &FeatureSpec, rng: &mut R) -> Rational {
    match f.kind {
        FeatureKind::Categorical => {
            let cats = f.categories.as_deref().unwrap_or(&[0]);
            rational::int(cats[rng.gen_range(0..cats.len())])
        }
        FeatureKind::Integer => {
            let lo = f.min.ceil().to_integer();
            let hi = f.max.floor().to_integer();
            let span = (&hi - &lo).to_u64().unwrap_or(u64::MAX - 1);
            Rational::from_integer(lo + BigInt::from(rng.gen_range(0..=span)))
        }
        FeatureKind::Continuous => {
            let k = rng.gen_range(0..=CONTINUOUS_STEPS);
            &f.min + (&f.max - &f.min) * rational::ratio(k as i64, CONTINUOUS_STEPS as i64)
        }
    }
}
