use std::collections::HashMap;

use serde::Deserialize;

use super::OracleError;
use crate::propdsl::{parse_condition, Condition, Valuation};
use crate::rational::parse_rational;
use crate::schema::{DatasetSchema, Instance, Prediction};

/// In-process models used as stand-ins for library-trained classifiers.
#[derive(Clone, Debug)]
pub enum BuiltinModel {
    Constant(Prediction),
    /// First matching rule wins; conditions range over the features of `var`.
    Rule { var: String, rules: Vec<(Condition, Prediction)>, default: Prediction },
    Table(HashMap<Instance, Prediction>),
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum ModelFile {
    Constant {
        prediction: Vec<i64>,
    },
    Rule {
        #[serde(default = "default_var")]
        var: String,
        rules: Vec<RuleEntry>,
        default: Vec<i64>,
    },
    Table {
        entries: Vec<TableEntry>,
        #[serde(default)]
        default: Option<Vec<i64>>,
    },
}

fn default_var() -> String {
    "x".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    when: String,
    then: Vec<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    input: Vec<String>,
    output: Vec<i64>,
}

fn config_err(message: impl Into<String>) -> OracleError {
    OracleError::Config(message.into())
}

impl BuiltinModel {
    pub fn rule(
        schema: &DatasetSchema,
        var: &str,
        rules: Vec<(Condition, Prediction)>,
        default: Prediction,
    ) -> Result<Self, OracleError> {
        for (cond, z) in &rules {
            if cond.mentions_predict() {
                return Err(config_err(format!("rule `{cond}` refers to a prediction")));
            }
            if cond.instance_vars().iter().any(|v| v != var) {
                return Err(config_err(format!("rule `{cond}` uses a variable other than `{var}`")));
            }
            check_prediction(schema, z)?;
        }
        check_prediction(schema, &default)?;
        Ok(BuiltinModel::Rule { var: var.to_string(), rules, default })
    }

    /// Builds a table over every instance of a fully-discrete schema.
    pub fn table_from_fn(
        schema: &DatasetSchema,
        mut f: impl FnMut(&Instance) -> Prediction,
    ) -> Result<Self, OracleError> {
        let all = schema
            .enumerate_instances(1 << 20)
            .ok_or_else(|| config_err("table models need a small fully-discrete schema"))?;
        let mut table = HashMap::with_capacity(all.len());
        for x in all {
            let z = f(&x);
            check_prediction(schema, &z)?;
            table.insert(x, z);
        }
        Ok(BuiltinModel::Table(table))
    }

    pub fn table(schema: &DatasetSchema, table: HashMap<Instance, Prediction>) -> Result<Self, OracleError> {
        let all = schema
            .enumerate_instances(1 << 20)
            .ok_or_else(|| config_err("table models need a small fully-discrete schema"))?;
        if let Some(missing) = all.iter().find(|x| !table.contains_key(x)) {
            return Err(config_err(format!("table has no entry for {missing}")));
        }
        for z in table.values() {
            check_prediction(schema, z)?;
        }
        Ok(BuiltinModel::Table(table))
    }

    /// Loads the JSON model description used by the command line.
    pub fn from_json(text: &str, schema: &DatasetSchema) -> Result<Self, OracleError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| config_err(e.to_string()))?;
        match file {
            ModelFile::Constant { prediction } => {
                let z = Prediction(prediction);
                check_prediction(schema, &z)?;
                Ok(BuiltinModel::Constant(z))
            }
            ModelFile::Rule { var, rules, default } => {
                let vars = [var.clone()];
                let rules = rules
                    .into_iter()
                    .map(|r| {
                        parse_condition(&r.when, &[], schema, &vars)
                            .map(|c| (c, Prediction(r.then)))
                            .map_err(|e| config_err(format!("rule `{}`: {e}", r.when)))
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Self::rule(schema, &var, rules, Prediction(default))
            }
            ModelFile::Table { entries, default } => {
                let mut table = HashMap::new();
                for e in entries {
                    let values = e
                        .input
                        .iter()
                        .map(|v| parse_rational(v).ok_or_else(|| config_err(format!("bad table value `{v}`"))))
                        .collect::<Result<Vec<_>, _>>()?;
                    table.insert(Instance(values), Prediction(e.output));
                }
                match default {
                    Some(d) => {
                        let d = Prediction(d);
                        Self::table_from_fn(schema, |x| table.get(x).cloned().unwrap_or_else(|| d.clone()))
                    }
                    None => Self::table(schema, table),
                }
            }
        }
    }

    pub fn predict(&self, x: &Instance) -> Result<Prediction, OracleError> {
        match self {
            BuiltinModel::Constant(z) => Ok(z.clone()),
            BuiltinModel::Rule { var, rules, default } => {
                let vars = std::slice::from_ref(var);
                let v = Valuation { vars, instances: std::slice::from_ref(x), predictions: &[] };
                for (cond, z) in rules {
                    if cond.eval(&v).map_err(|e| config_err(e.to_string()))? {
                        return Ok(z.clone());
                    }
                }
                Ok(default.clone())
            }
            BuiltinModel::Table(t) => {
                t.get(x).cloned().ok_or_else(|| OracleError::Config(format!("table has no entry for {x}")))
            }
        }
    }
}

fn check_prediction(schema: &DatasetSchema, z: &Prediction) -> Result<(), OracleError> {
    schema
        .validate_prediction(z)
        .map_err(|v| config_err(format!("prediction {:?}: {}", z.0, v[0])))
}
