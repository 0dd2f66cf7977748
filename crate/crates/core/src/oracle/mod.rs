//! Black-box access to the model under test.

mod builtin;
mod external;

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::schema::{DatasetSchema, Instance, Prediction};

pub use builtin::BuiltinModel;
pub use external::{decode_reply, encode_request, ExternalModel, DEFAULT_TIMEOUT, WIRE_DIGITS};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("invalid model description: {0}")]
    Config(String),
    #[error("cannot start `{command}`: {message}")]
    Spawn { command: String, message: String },
    #[error("handshake with `{command}` failed: expected `READY <m>`, got `{reply}`")]
    Handshake { command: String, reply: String },
    #[error("label-count mismatch: schema has {expected} labels, model announced {found}")]
    LabelCountMismatch { expected: usize, found: usize },
    #[error("model timed out after {timeout_ms} ms on request `{request}`")]
    Timeout { request: String, timeout_ms: u64 },
    #[error("model process died while handling `{request}`")]
    ProcessDied { request: String },
    #[error("protocol violation: request `{request}` got reply `{reply}`")]
    Protocol { request: String, reply: String },
    #[error("instance {instance} rejected: {reason}")]
    InvalidInstance { instance: String, reason: String },
    #[error("model returned invalid prediction {prediction:?} for {instance}: {reason}")]
    InvalidPrediction { instance: String, prediction: Vec<i64>, reason: String },
}

#[derive(Debug)]
pub enum Backend {
    Builtin(Arc<BuiltinModel>),
    External(ExternalModel),
}

/// A model under test with a per-instance prediction cache.
#[derive(Debug)]
pub struct ModelUnderTest {
    backend: Backend,
    schema: DatasetSchema,
    cache: HashMap<Instance, Prediction>,
    query_count: u64,
    backend_calls: u64,
}

impl ModelUnderTest {
    pub fn builtin(model: impl Into<Arc<BuiltinModel>>, schema: DatasetSchema) -> Self {
        Self::with_backend(Backend::Builtin(model.into()), schema)
    }

    pub fn spawn_external(command: &str, schema: DatasetSchema) -> Result<Self, OracleError> {
        Self::spawn_external_with_timeout(command, schema, DEFAULT_TIMEOUT)
    }

    pub fn spawn_external_with_timeout(
        command: &str,
        schema: DatasetSchema,
        timeout: Duration,
    ) -> Result<Self, OracleError> {
        let process = ExternalModel::spawn(command, schema.l_size(), timeout)?;
        Ok(Self::with_backend(Backend::External(process), schema))
    }

    fn with_backend(backend: Backend, schema: DatasetSchema) -> Self {
        Self { backend, schema, cache: HashMap::new(), query_count: 0, backend_calls: 0 }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// Instances asked for so far, counting repeats.
    pub fn query_count(&self) -> u64 {
        self.query_count
    }

    /// Instances that actually reached the backend (cache misses).
    pub fn backend_calls(&self) -> u64 {
        self.backend_calls
    }

    pub fn predict_one(&mut self, x: &Instance) -> Result<Prediction, OracleError> {
        if let Err(v) = self.schema.validate_instance(x) {
            return Err(OracleError::InvalidInstance { instance: x.to_string(), reason: v[0].to_string() });
        }
        self.query_count += 1;
        if let Some(z) = self.cache.get(x) {
            return Ok(z.clone());
        }
        self.backend_calls += 1;
        let z = match &mut self.backend {
            Backend::Builtin(m) => m.predict(x)?,
            Backend::External(p) => p.predict(x)?,
        };
        if let Err(v) = self.schema.validate_prediction(&z) {
            return Err(OracleError::InvalidPrediction {
                instance: x.to_string(),
                prediction: z.0,
                reason: v[0].to_string(),
            });
        }
        self.cache.insert(x.clone(), z.clone());
        Ok(z)
    }

    pub fn predict(&mut self, xs: &[Instance]) -> Result<Vec<Prediction>, OracleError> {
        xs.iter().map(|x| self.predict_one(x)).collect()
    }
}
