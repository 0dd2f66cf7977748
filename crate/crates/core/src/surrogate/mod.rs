//! White-box models trained on the predictions of the model under test.

mod mlp;
mod tree;

use std::collections::HashSet;

use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{int, ratio, round_scaled, Rational};
use crate::schema::{DatasetSchema, Instance, Prediction};

pub use mlp::{mlp_forward, train_mlp, Layer, LayerTrace, MlpSurrogate, OutputMode};
pub use tree::{dt_predict, train_decision_tree, DecisionTree, EdgeCond, TreeNode};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SurrogateError {
    #[error("cannot train on an empty data set")]
    EmptyData,
    #[error("invalid training parameters: {0}")]
    Params(String),
}

/// Training rows; append-only, one row per distinct instance.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    rows: Vec<(Instance, Prediction)>,
    seen: HashSet<Instance>,
}

impl LabeledSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a row unless the instance is already present; reports whether it was added.
    pub fn push(&mut self, x: Instance, z: Prediction) -> bool {
        if self.seen.contains(&x) {
            return false;
        }
        self.seen.insert(x.clone());
        self.rows.push((x, z));
        true
    }

    pub fn rows(&self) -> &[(Instance, Prediction)] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn contains(&self, x: &Instance) -> bool {
        self.seen.contains(x)
    }
}

impl FromIterator<(Instance, Prediction)> for LabeledSet {
    fn from_iter<I: IntoIterator<Item = (Instance, Prediction)>>(iter: I) -> Self {
        let mut set = LabeledSet::new();
        for (x, z) in iter {
            set.push(x, z);
        }
        set
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitCriterion {
    Gini,
    Entropy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Nodes with fewer rows than this become leaves.
    pub min_samples_split: usize,
    pub criterion: SplitCriterion,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 8, min_samples_split: 2, criterion: SplitCriterion::Gini }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self { hidden: vec![10, 10], epochs: 200, learning_rate: 0.01, batch_size: 32, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub tree: TreeParams,
    pub mlp: MlpParams,
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        if self.tree.max_depth == 0 {
            return Err(SurrogateError::Params("max_depth must be positive".into()));
        }
        if self.tree.min_samples_split < 2 {
            return Err(SurrogateError::Params("min_samples_split must be at least 2".into()));
        }
        if self.mlp.hidden.iter().any(|&n| n == 0) {
            return Err(SurrogateError::Params("hidden layers need at least one neuron".into()));
        }
        if self.mlp.epochs == 0 || self.mlp.batch_size == 0 {
            return Err(SurrogateError::Params("epochs and batch_size must be positive".into()));
        }
        if !(self.mlp.learning_rate > 0.0 && self.mlp.learning_rate.is_finite()) {
            return Err(SurrogateError::Params("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Dt,
    Nn,
}

impl SurrogateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SurrogateKind::Dt => "dt",
            SurrogateKind::Nn => "nn",
        }
    }
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dt" => Ok(SurrogateKind::Dt),
            "nn" => Ok(SurrogateKind::Nn),
            other => Err(format!("unknown white-box model `{other}` (expected dt or nn)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Surrogate {
    Dt(DecisionTree),
    Nn(MlpSurrogate),
}

impl Surrogate {
    pub fn train(
        kind: SurrogateKind,
        data: &LabeledSet,
        schema: &DatasetSchema,
        params: &TrainParams,
    ) -> Result<Self, SurrogateError> {
        Ok(match kind {
            SurrogateKind::Dt => Surrogate::Dt(train_decision_tree(data, schema, &params.tree)?),
            SurrogateKind::Nn => Surrogate::Nn(train_mlp(data, schema, &params.mlp)?),
        })
    }

    pub fn predict(&self, x: &Instance) -> Prediction {
        match self {
            Surrogate::Dt(t) => dt_predict(t, x),
            Surrogate::Nn(n) => mlp_forward(n, x).1,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surrogates serialize")
    }
}

/// Parameter resolution: thousandths.
pub const QUANT_SCALE: i64 = 1000;
pub const QUANT_LIMIT: i64 = 10;

/// Clamps to [-10, 10] and rounds half away from zero to 3 decimals,
/// returning the result in thousandths.
pub fn quantize_thousandths(p: &Rational) -> i64 {
    let clamped = if *p > int(QUANT_LIMIT) {
        int(QUANT_LIMIT)
    } else if *p < int(-QUANT_LIMIT) {
        int(-QUANT_LIMIT)
    } else {
        p.clone()
    };
    let scaled: BigInt = round_scaled(&clamped, 3);
    scaled.to_i64().expect("clamped value fits")
}

pub fn quantize(p: &Rational) -> Rational {
    ratio(quantize_thousandths(p), QUANT_SCALE)
}

fn quantize_f64(p: f64) -> i64 {
    if p.is_nan() {
        return 0;
    }
    let p = p.clamp(-(QUANT_LIMIT as f64), QUANT_LIMIT as f64);
    quantize_thousandths(&crate::rational::from_f64(p).expect("finite after clamp"))
}
