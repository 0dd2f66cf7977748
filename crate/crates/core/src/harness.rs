//! Comparison harness: runs testers over tasks and seeds and aggregates
//! detection probabilities into a table. Also provides the planted tasks
//! used by the benchmarks and the acceptance suite.

use std::fmt::Write as _;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use crate::baseline::{run_baseline, BaselineConfig, BaselineKind};
use crate::engine::{generate_test_suite, EngineConfig, TestSuite};
use crate::oracle::{BuiltinModel, ModelUnderTest};
use crate::propdsl::{concept_property, fairness_property, parse_concept_formula, parse_condition, trojan_property, PropertySpec};
use crate::rational::{int, ratio};
use crate::schema::{DatasetSchema, FeatureSpec, Instance, LabelSpec, Prediction};
use crate::surrogate::SurrogateKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tester {
    EngineDt,
    EngineNn,
    Random,
    Art,
}

impl Tester {
    pub const ALL: [Tester; 4] = [Tester::EngineDt, Tester::EngineNn, Tester::Random, Tester::Art];

    pub fn as_str(self) -> &'static str {
        match self {
            Tester::EngineDt => "engine-dt",
            Tester::EngineNn => "engine-nn",
            Tester::Random => "random",
            Tester::Art => "art",
        }
    }
}

impl FromStr for Tester {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Tester::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tester `{s}` (expected engine-dt, engine-nn, random or art)"))
    }
}

/// A model under test together with the property it is checked against.
#[derive(Clone, Debug)]
pub struct Task {
    pub name: String,
    pub schema: DatasetSchema,
    pub spec: PropertySpec,
    pub model: Arc<BuiltinModel>,
}

impl Task {
    pub fn mut_(&self) -> ModelUnderTest {
        ModelUnderTest::builtin(self.model.clone(), self.schema.clone())
    }
}

/// Runs one tester once. Baselines get `cfg.max_samples` candidates.
pub fn run_tester(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    schema: &DatasetSchema,
    tester: Tester,
    seed: u64,
    cfg: &EngineConfig,
    art_pool: usize,
) -> TestSuite {
    let baseline = |kind| BaselineConfig { budget: cfg.max_samples, kind, art_pool, seed, multi: cfg.multi };
    match tester {
        Tester::EngineDt | Tester::EngineNn => {
            let wbm = if tester == Tester::EngineDt { SurrogateKind::Dt } else { SurrogateKind::Nn };
            let cfg = EngineConfig { wbm, seed, ..cfg.clone() };
            generate_test_suite(mut_, spec, schema, &cfg)
        }
        Tester::Random => run_baseline(mut_, spec, schema, &baseline(BaselineKind::Random)),
        Tester::Art => run_baseline(mut_, spec, schema, &baseline(BaselineKind::Art)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub task: String,
    pub tester: Tester,
    pub seed: u64,
    pub found: bool,
    pub suite_size: usize,
    pub queries: u64,
    pub solver_calls: u64,
    pub wall_time: Duration,
    pub failure: Option<String>,
}

impl RunRecord {
    pub fn from_suite(task: &str, tester: Tester, seed: u64, suite: &TestSuite) -> Self {
        Self {
            task: task.to_string(),
            tester,
            seed,
            found: suite.found(),
            suite_size: suite.counterexamples.len(),
            queries: suite.stats.queries,
            solver_calls: suite.stats.solver_calls,
            wall_time: suite.stats.wall_time,
            failure: suite.stats.failure.as_ref().map(|f| f.message.clone()),
        }
    }
}

/// Mean and standard error of the mean (sample deviation over √n).
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub task: String,
    pub tester: Tester,
    pub runs: usize,
    pub failures: usize,
    /// Fraction of runs that found at least one counterexample.
    pub probability: f64,
    pub mean_found: f64,
    pub sem_found: f64,
    pub mean_queries: f64,
    pub sem_queries: f64,
    pub mean_wall_secs: f64,
}

pub fn summarize(task: &str, tester: Tester, runs: &[RunRecord]) -> CellSummary {
    let found: Vec<f64> = runs.iter().map(|r| r.suite_size as f64).collect();
    let queries: Vec<f64> = runs.iter().map(|r| r.queries as f64).collect();
    let wall: Vec<f64> = runs.iter().map(|r| r.wall_time.as_secs_f64()).collect();
    let (mean_found, sem_found) = mean_sem(&found);
    let (mean_queries, sem_queries) = mean_sem(&queries);
    let hits = runs.iter().filter(|r| r.found).count();
    CellSummary {
        task: task.to_string(),
        tester,
        runs: runs.len(),
        failures: runs.iter().filter(|r| r.failure.is_some()).count(),
        probability: if runs.is_empty() { 0.0 } else { hits as f64 / runs.len() as f64 },
        mean_found,
        sem_found,
        mean_queries,
        sem_queries,
        mean_wall_secs: mean_sem(&wall).0,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchTable {
    pub cells: Vec<CellSummary>,
}

impl BenchTable {
    pub fn cell(&self, task: &str, tester: Tester) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.task == task && c.tester == tester)
    }

    fn tasks(&self) -> Vec<&str> {
        let mut tasks: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !tasks.contains(&c.task.as_str()) {
                tasks.push(&c.task);
            }
        }
        tasks
    }

    fn testers(&self) -> Vec<Tester> {
        let mut testers: Vec<Tester> = Vec::new();
        for c in &self.cells {
            if !testers.contains(&c.tester) {
                testers.push(c.tester);
            }
        }
        testers
    }

    /// Task rows by tester columns; each cell reads
    /// `probability (mean found ± SEM)`. Timings are left out so that
    /// reports are reproducible.
    pub fn to_markdown(&self) -> String {
        let testers = self.testers();
        let mut out = String::from("| task |");
        for t in &testers {
            let _ = write!(out, " {} |", t.as_str());
        }
        out.push_str("\n|---|");
        for _ in &testers {
            out.push_str("---|");
        }
        out.push('\n');
        for task in self.tasks() {
            let _ = write!(out, "| {task} |");
            for &t in &testers {
                match self.cell(task, t) {
                    Some(c) => {
                        let _ = write!(out, " {:.2} ({:.2} ± {:.2}) |", c.probability, c.mean_found, c.sem_found);
                    }
                    None => out.push_str(" - |"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("task,tester,runs,failures,probability,mean_found,sem_found,mean_queries,sem_queries\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4},{:.4}",
                csv_field(&c.task),
                c.tester.as_str(),
                c.runs,
                c.failures,
                c.probability,
                c.mean_found,
                c.sem_found,
                c.mean_queries,
                c.sem_queries
            );
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs every tester on every task for each seed.
pub fn bench(tasks: &[Task], testers: &[Tester], seeds: &[u64], cfg: &EngineConfig, art_pool: usize) -> BenchTable {
    let mut table = BenchTable::default();
    for task in tasks {
        for &tester in testers {
            let runs: Vec<RunRecord> = seeds
                .iter()
                .map(|&seed| {
                    let mut mut_ = task.mut_();
                    let suite = run_tester(&mut mut_, &task.spec, &task.schema, tester, seed, cfg, art_pool);
                    RunRecord::from_suite(&task.name, tester, seed, &suite)
                })
                .collect();
            table.cells.push(summarize(&task.name, tester, &runs));
        }
    }
    table
}

fn binary_schema(n: usize, labels: Vec<LabelSpec>) -> DatasetSchema {
    let features = (0..n).map(|i| FeatureSpec::binary(&format!("f{i}"))).collect();
    DatasetSchema::new(features, labels).expect("valid planted schema")
}

/// Four binary features; the prediction equals the sensitive feature `f1`.
pub fn planted_unfairness() -> Task {
    let schema = binary_schema(4, vec![LabelSpec::boolean("class")]);
    let vars = ["x".to_string()];
    let cond = parse_condition("x[1] == 1", &[], &schema, &vars).expect("valid rule");
    let model = BuiltinModel::rule(&schema, "x", vec![(cond, Prediction::single(1))], Prediction::single(0))
        .expect("valid rule model");
    let spec = fairness_property(&schema, 1).expect("valid fairness property");
    Task { name: "unfairness".into(), schema, spec, model: Arc::new(model) }
}

/// The constant model, which no fairness check can fault.
pub fn constant_fairness() -> Task {
    let schema = binary_schema(4, vec![LabelSpec::boolean("class")]);
    let spec = fairness_property(&schema, 1).expect("valid fairness property");
    Task { name: "constant".into(), schema, spec, model: Arc::new(BuiltinModel::Constant(Prediction::single(0))) }
}

/// Trigger features of the planted trojan task and their values.
pub const TROJAN_TRIGGER: [(usize, i64); 2] = [(2, 1), (5, 0)];

/// Triggered inputs on which the planted trojan table predicts class 0.
pub fn trojan_exceptions() -> Vec<Instance> {
    [[0, 0, 1, 1, 0, 0, 1, 0], [1, 0, 1, 0, 1, 0, 0, 1], [1, 1, 1, 1, 1, 0, 1, 1]]
        .iter()
        .map(|v| Instance::from_ints(v))
        .collect()
}

/// Eight binary features. Inputs matching the trigger are predicted 1, apart
/// from the exceptions when `exceptions` is set; other inputs get `f0 xor f7`.
pub fn planted_trojan(exceptions: bool) -> Task {
    let schema = binary_schema(8, vec![LabelSpec::boolean("class")]);
    let holes = if exceptions { trojan_exceptions() } else { Vec::new() };
    let model = BuiltinModel::table_from_fn(&schema, |x| {
        let v: Vec<i64> = x.0.iter().map(|r| i64::from(*r == int(1))).collect();
        let triggered = TROJAN_TRIGGER.iter().all(|&(f, t)| v[f] == t);
        if triggered {
            Prediction::single(if holes.contains(x) { 0 } else { 1 })
        } else {
            Prediction::single(v[0] ^ v[7])
        }
    })
    .expect("valid table model");
    let mut trigger = vec![0; 8];
    let features: Vec<usize> = TROJAN_TRIGGER.iter().map(|&(f, _)| f).collect();
    for &(f, t) in &TROJAN_TRIGGER {
        trigger[f] = t;
    }
    let spec = trojan_property(&schema, &features, &Instance::from_ints(&trigger), &Prediction::single(1))
        .expect("valid trojan property");
    let name = if exceptions { "trojan" } else { "trojan-clean" };
    Task { name: name.into(), schema, spec, model: Arc::new(model) }
}

/// Two continuous features in [0,1] and labels dog and animal. The model
/// predicts a dog that is not an animal when both features exceed 1/2.
pub fn planted_concept(formula: &str) -> Task {
    let features = vec![
        FeatureSpec::continuous("u", ratio(0, 1), ratio(1, 1)),
        FeatureSpec::continuous("v", ratio(0, 1), ratio(1, 1)),
    ];
    let schema = DatasetSchema::new(features, vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")])
        .expect("valid planted schema");
    let vars = ["x".to_string()];
    let rule = |text: &str| parse_condition(text, &[], &schema, &vars).expect("valid rule");
    let rules = vec![
        (rule("x[0] > 1/2 and x[1] > 1/2"), Prediction(vec![1, 0])),
        (rule("x[0] > 1/2"), Prediction(vec![1, 1])),
        (rule("x[1] > 1/2"), Prediction(vec![0, 1])),
    ];
    let model = BuiltinModel::rule(&schema, "x", rules, Prediction(vec![0, 0])).expect("valid rule model");
    let phi = parse_concept_formula(formula, &schema, "x").expect("valid concept formula");
    let spec = concept_property(&schema, phi).expect("valid concept property");
    Task { name: format!("concept:{formula}"), schema, spec, model: Arc::new(model) }
}

/// Integer feature `level` in [0,10] plus binary `s` and `flag`. The class
/// equals `s` when `level` lies outside [2,7] or `flag` is set, and is 0
/// otherwise.
pub fn planted_bounded() -> Task {
    let features = vec![FeatureSpec::integer("level", 0, 10), FeatureSpec::binary("s"), FeatureSpec::binary("flag")];
    let schema = DatasetSchema::new(features, vec![LabelSpec::boolean("class")]).expect("valid planted schema");
    let vars = ["x".to_string()];
    let cond = parse_condition("(x[0] < 2 or x[0] > 7 or x[2] == 1) and x[1] == 1", &[], &schema, &vars)
        .expect("valid rule");
    let model = BuiltinModel::rule(&schema, "x", vec![(cond, Prediction::single(1))], Prediction::single(0))
        .expect("valid rule model");
    let spec = fairness_property(&schema, 1).expect("valid fairness property");
    Task { name: "bounded".into(), schema, spec, model: Arc::new(model) }
}

/// Training rows whose `level` spans exactly [2,7].
pub fn bounded_training_rows() -> Vec<Instance> {
    (2..=7).flat_map(|l| [Instance::from_ints(&[l, 0, 1]), Instance::from_ints(&[l, 1, 0])]).collect()
}
