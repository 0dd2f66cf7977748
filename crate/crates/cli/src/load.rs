//! Turning command-line references into schemas, properties and models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use mlcheck_core::rational::parse_rational;
use mlcheck_core::{
    concept_property, fairness_property, parse_concept_formula, parse_property_file, trojan_property, BuiltinModel,
    DatasetSchema, Instance, ModelUnderTest, Prediction, PropertySpec,
};

/// Marks errors that should end the process with the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(message.into()))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

pub fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_schema(path: &Path) -> Result<DatasetSchema> {
    let text = read(path)?;
    DatasetSchema::parse_xml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrojanFile {
    /// Feature name to trigger value.
    trigger: BTreeMap<String, serde_json::Value>,
    /// Target class per label.
    target: Vec<i64>,
}

fn json_rational(v: &serde_json::Value) -> Option<mlcheck_core::Rational> {
    match v {
        serde_json::Value::Number(n) => parse_rational(&n.to_string()),
        serde_json::Value::String(s) => parse_rational(s),
        _ => None,
    }
}

fn trojan_from_file(schema: &DatasetSchema, path: &Path) -> Result<PropertySpec> {
    let text = read(path)?;
    let file: TrojanFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut trigger: Vec<_> = schema.features.iter().map(|f| f.min.clone()).collect();
    let mut features = Vec::new();
    for (name, value) in &file.trigger {
        let i = schema.feature_index(name).ok_or_else(|| usage(format!("{}: unknown feature `{name}`", path.display())))?;
        trigger[i] = json_rational(value).ok_or_else(|| usage(format!("{}: bad trigger value for `{name}`", path.display())))?;
        features.push(i);
    }
    trojan_property(schema, &features, &Instance(trigger), &Prediction(file.target))
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// `fairness:s=<feature>`, `concept:<formula>`, `trojan:<file>`, or a
/// property file path (optionally prefixed with `file:`).
pub fn load_property(schema: &DatasetSchema, reference: &str, base: &Path) -> Result<PropertySpec> {
    if let Some(rest) = reference.strip_prefix("fairness:") {
        let name = rest.strip_prefix("s=").unwrap_or(rest);
        let s = schema
            .feature_index(name)
            .or_else(|| name.parse().ok().filter(|&i: &usize| i < schema.f_size()))
            .ok_or_else(|| usage(format!("fairness: unknown feature `{name}`")))?;
        return fairness_property(schema, s).map_err(|e| usage(e.to_string()));
    }
    if let Some(formula) = reference.strip_prefix("concept:") {
        let phi = parse_concept_formula(formula, schema, "x").map_err(|e| usage(format!("concept: {e}")))?;
        return concept_property(schema, phi).map_err(|e| usage(e.to_string()));
    }
    if let Some(path) = reference.strip_prefix("trojan:") {
        return trojan_from_file(schema, &resolve(base, path));
    }
    let path = resolve(base, reference.strip_prefix("file:").unwrap_or(reference));
    let text = read(&path)?;
    parse_property_file(&text, schema).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// How to obtain a fresh model under test for every run.
#[derive(Clone, Debug)]
pub enum MutSource {
    Builtin(std::sync::Arc<BuiltinModel>),
    External(String),
}

impl MutSource {
    /// `builtin:<model.json>` or `external:<shell command>`.
    pub fn parse(schema: &DatasetSchema, reference: &str, base: &Path) -> Result<Self> {
        if let Some(path) = reference.strip_prefix("builtin:") {
            let path = resolve(base, path);
            let text = read(&path)?;
            let model = BuiltinModel::from_json(&text, schema).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            return Ok(MutSource::Builtin(std::sync::Arc::new(model)));
        }
        if let Some(cmd) = reference.strip_prefix("external:") {
            if cmd.trim().is_empty() {
                bail!(usage("external: empty command"));
            }
            return Ok(MutSource::External(cmd.to_string()));
        }
        Err(usage(format!("model reference `{reference}` must start with builtin: or external:")))
    }

    pub fn instantiate(&self, schema: &DatasetSchema) -> Result<ModelUnderTest> {
        match self {
            MutSource::Builtin(m) => Ok(ModelUnderTest::builtin(m.clone(), schema.clone())),
            MutSource::External(cmd) => ModelUnderTest::spawn_external(cmd, schema.clone())
                .map_err(|e| anyhow!(e))
                .with_context(|| format!("starting model `{cmd}`")),
        }
    }
}

/// Flattens a TOML config table into command-line arguments placed ahead of
/// the real ones, so explicit flags win.
pub fn config_args(path: &Path) -> Result<Vec<String>> {
    let text = read(path)?;
    let table: toml::Table = text.parse().map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let mut args = Vec::new();
    for (key, value) in table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => args.push(flag),
            toml::Value::Boolean(false) => {}
            toml::Value::String(s) => args.extend([flag, s]),
            toml::Value::Integer(i) => args.extend([flag, i.to_string()]),
            toml::Value::Float(f) => args.extend([flag, f.to_string()]),
            toml::Value::Array(items) => {
                let parts: Vec<String> = items
                    .iter()
                    .map(|v| match v {
                        toml::Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                    .collect();
                args.extend([flag, parts.join(",")]);
            }
            other => bail!(usage(format!("{}: unsupported value for `{key}`: {other}", path.display()))),
        }
    }
    Ok(args)
}
