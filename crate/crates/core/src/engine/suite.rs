use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;

use crate::schema::{Instance, Prediction};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Counterexample {
    /// One instance per property instance variable.
    pub instances: Vec<Instance>,
    /// Predictions of the model under test on `instances`.
    pub predictions: Vec<Prediction>,
    /// What the surrogate predicted when the candidate was produced; empty
    /// for baseline testers.
    pub surrogate_predictions: Vec<Prediction>,
    pub iteration: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Oracle,
    Solver,
    Surrogate,
    Sampling,
    Config,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SuiteStats {
    /// Instances submitted to the model under test, cache hits included.
    pub queries: u64,
    pub solver_calls: u64,
    pub unknown_results: u64,
    pub retrains: u64,
    /// Candidates checked against the model under test.
    pub candidates: u64,
    /// Candidates that turned out not to violate the property.
    pub rejected: u64,
    pub seed_rows: u64,
    pub fresh_rows: u64,
    pub sampling_rejections: u64,
    pub stop_reason: String,
    pub failure: Option<Failure>,
    /// Reported in summaries only; kept out of suite files so they are reproducible.
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSuite {
    pub property: String,
    pub tester: String,
    pub instance_vars: Vec<String>,
    pub counterexamples: Vec<Counterexample>,
    pub stats: SuiteStats,
}

#[derive(Serialize)]
struct Entry<'a> {
    var: &'a str,
    instance: &'a Instance,
    prediction: &'a Prediction,
    #[serde(skip_serializing_if = "Option::is_none")]
    surrogate: Option<&'a Prediction>,
}

#[derive(Serialize)]
struct Record<'a> {
    record: &'static str,
    property: &'a str,
    tester: &'a str,
    index: usize,
    iteration: usize,
    entries: Vec<Entry<'a>>,
}

#[derive(Serialize)]
struct StatsRecord<'a> {
    record: &'static str,
    property: &'a str,
    tester: &'a str,
    found: usize,
    #[serde(flatten)]
    stats: &'a SuiteStats,
}

impl TestSuite {
    pub fn new(property: &str, tester: &str, instance_vars: &[String]) -> Self {
        Self {
            property: property.to_string(),
            tester: tester.to_string(),
            instance_vars: instance_vars.to_vec(),
            counterexamples: Vec::new(),
            stats: SuiteStats::default(),
        }
    }

    pub fn found(&self) -> bool {
        !self.counterexamples.is_empty()
    }

    pub fn failed(&self) -> bool {
        self.stats.failure.is_some()
    }

    /// One JSON record per counterexample followed by a stats record.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (index, cex) in self.counterexamples.iter().enumerate() {
            let entries = self
                .instance_vars
                .iter()
                .enumerate()
                .map(|(i, var)| Entry {
                    var,
                    instance: &cex.instances[i],
                    prediction: &cex.predictions[i],
                    surrogate: cex.surrogate_predictions.get(i),
                })
                .collect();
            let record = Record {
                record: "counterexample",
                property: &self.property,
                tester: &self.tester,
                index,
                iteration: cex.iteration,
                entries,
            };
            let _ = writeln!(out, "{}", serde_json::to_string(&record).expect("records serialize"));
        }
        let stats = StatsRecord {
            record: "stats",
            property: &self.property,
            tester: &self.tester,
            found: self.counterexamples.len(),
            stats: &self.stats,
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&stats).expect("records serialize"));
        out
    }

    /// Short human-readable report.
    pub fn summary(&self) -> String {
        let s = &self.stats;
        let mut out = String::new();
        let _ = writeln!(out, "property   {}", self.property);
        let _ = writeln!(out, "tester     {}", self.tester);
        let _ = writeln!(out, "found      {}", self.counterexamples.len());
        let _ = writeln!(
            out,
            "queries    {} (candidates {}, rejected {}, seed rows {}, fresh rows {})",
            s.queries, s.candidates, s.rejected, s.seed_rows, s.fresh_rows
        );
        let _ = writeln!(out, "solver     {} calls, {} unknown, {} retrains", s.solver_calls, s.unknown_results, s.retrains);
        let _ = writeln!(out, "stopped    {}", s.stop_reason);
        let _ = writeln!(out, "wall time  {:.3} s", s.wall_time.as_secs_f64());
        if let Some(f) = &s.failure {
            let _ = writeln!(out, "FAILURE    {:?}: {}", f.kind, f.message);
        }
        for (i, cex) in self.counterexamples.iter().take(10).enumerate() {
            let parts: Vec<String> = self
                .instance_vars
                .iter()
                .zip(cex.instances.iter().zip(&cex.predictions))
                .map(|(v, (x, z))| format!("{v}={x} -> {:?}", z.0))
                .collect();
            let _ = writeln!(out, "  #{i}: {}", parts.join("; "));
        }
        if self.counterexamples.len() > 10 {
            let _ = writeln!(out, "  ... {} more", self.counterexamples.len() - 10);
        }
        out
    }
}
