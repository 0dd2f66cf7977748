//! Property-driven testing of black-box classifiers.
//!
//! A white-box surrogate (decision tree or small ReLU network) is trained on
//! the predictions of the model under test, compiled together with the
//! negated property into SMT-LIB, and solved. Solver models are candidate
//! test inputs; candidates the model under test confirms go into the test
//! suite, the rest are fed back as training data.

pub mod baseline;
pub mod engine;
pub mod harness;
pub mod oracle;
pub mod propdsl;
pub mod rational;
pub mod schema;
pub mod smt;
pub mod surrogate;

pub use propdsl::{
    build_property, concept_property, fairness_property, parse_concept_formula, parse_condition, parse_property_file, trojan_property,
    AssertClause, AssumeClause, CmpOp, Condition, Expr, Literal, PropError, PropertySpec,
};
pub use baseline::{adaptive_random_test, random_test, run_baseline, BaselineConfig, BaselineKind};
pub use engine::{
    check_candidate, derive_bounds, generate_test_suite, revalidate, CandidateCheck, Counterexample, EngineConfig, Failure,
    FailureKind, SuiteStats, TestSuite,
};
pub use harness::{BenchTable, Tester};
pub use oracle::{BuiltinModel, ModelUnderTest, OracleError};
pub use rational::Rational;
pub use schema::{DatasetSchema, FeatureKind, FeatureSpec, Instance, LabelSpec, Prediction, SchemaError};
pub use surrogate::{
    dt_predict, mlp_forward, quantize, train_decision_tree, train_mlp, DecisionTree, LabeledSet, MlpSurrogate,
    Surrogate, SurrogateKind, TrainParams,
};
