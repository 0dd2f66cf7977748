//! Verification-based test generation: train a surrogate on the model under
//! test, look for property violations on it with the solver, confirm them on
//! the model under test, and retrain when the surrogate is wrong.

mod suite;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baseline::AssumeSampler;
use crate::oracle::{ModelUnderTest, OracleError};
use crate::propdsl::PropertySpec;
use crate::rational::Rational;
use crate::schema::{DatasetSchema, FeatureKind, Instance, Prediction};
use crate::smt::sexpr::SExpr;
use crate::smt::{block_assignment, encode_property, solve, SmtScript, SolveOutcome, SolverConfig};
use crate::surrogate::{LabeledSet, Surrogate, SurrogateKind, TrainParams};

pub use suite::{Counterexample, Failure, FailureKind, SuiteStats, TestSuite};

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub wbm: SurrogateKind,
    /// Keep going after the first confirmed counterexample.
    pub multi: bool,
    /// Budget of solver candidates plus fresh random rows.
    pub max_samples: usize,
    /// Confine counterexamples to per-feature bounds of the training data.
    pub bound_cex: bool,
    pub initial_train_size: usize,
    /// Invalid candidates collected before the surrogate is retrained.
    pub retrain_trigger: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub train: TrainParams,
    /// Data used for bounds when `bound_cex` is set; the seed rows otherwise.
    pub bound_data: Option<Vec<Instance>>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            wbm: SurrogateKind::Dt,
            multi: false,
            max_samples: 1000,
            bound_cex: false,
            initial_train_size: 200,
            retrain_trigger: 5,
            seed: 0,
            solver: SolverConfig::from_env(),
            train: TrainParams::default(),
            bound_data: None,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_samples == 0 {
            return Err("max_samples must be positive".into());
        }
        if self.initial_train_size == 0 {
            return Err("initial_train_size must be positive".into());
        }
        if self.retrain_trigger == 0 {
            return Err("retrain_trigger must be positive".into());
        }
        self.train.validate().map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CandidateCheck {
    /// The property fails on the model under test.
    Valid(Vec<Prediction>),
    Invalid(Vec<Prediction>),
}

/// Queries the model under test on a candidate and evaluates
/// `assume ∧ ¬assert` with its predictions.
pub fn check_candidate(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    instances: &[Instance],
) -> Result<CandidateCheck, OracleError> {
    let predictions = mut_.predict(instances)?;
    let violated = spec.is_violated_by(instances, &predictions).unwrap_or(false);
    Ok(if violated { CandidateCheck::Valid(predictions) } else { CandidateCheck::Invalid(predictions) })
}

/// Componentwise minimum and maximum over the rows.
pub fn derive_bounds(data: &LabeledSet) -> Option<Vec<(Rational, Rational)>> {
    bounds_of(data.rows().iter().map(|(x, _)| x))
}

pub fn bounds_of<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Option<Vec<(Rational, Rational)>> {
    let mut iter = instances.into_iter();
    let first = iter.next()?;
    let mut bounds: Vec<(Rational, Rational)> = first.0.iter().map(|v| (v.clone(), v.clone())).collect();
    for x in iter {
        for ((lo, hi), v) in bounds.iter_mut().zip(&x.0) {
            if v < lo {
                *lo = v.clone();
            }
            if v > hi {
                *hi = v.clone();
            }
        }
    }
    Some(bounds)
}

/// Rounds integral features so the model under test only sees admissible values.
fn snap(schema: &DatasetSchema, x: &Instance) -> Instance {
    Instance(
        x.0.iter()
            .zip(&schema.features)
            .map(|(v, f)| match f.kind {
                FeatureKind::Continuous => v.clone(),
                _ => v.round(),
            })
            .collect(),
    )
}

struct Run<'a> {
    mut_: &'a mut ModelUnderTest,
    spec: &'a PropertySpec,
    schema: &'a DatasetSchema,
    cfg: &'a EngineConfig,
    rng: ChaCha8Rng,
    data: LabeledSet,
    bounds: Option<Vec<(Rational, Rational)>>,
    suite: TestSuite,
    budget_used: usize,
}

enum Stop {
    Done(String),
    Failed(Failure),
}

fn fail(kind: FailureKind, message: impl ToString) -> Stop {
    Stop::Failed(Failure { kind, message: message.to_string() })
}

impl Run<'_> {
    fn train(&mut self) -> Result<SmtScript, Stop> {
        let mut params = self.cfg.train.clone();
        params.mlp.seed = self.cfg.seed.wrapping_add(self.suite.stats.retrains);
        let surrogate = Surrogate::train(self.cfg.wbm, &self.data, self.schema, &params)
            .map_err(|e| fail(FailureKind::Surrogate, e))?;
        let script = encode_property(self.spec, self.schema, &surrogate, self.bounds.as_deref())
            .map_err(|e| fail(FailureKind::Solver, e))?;
        Ok(script)
    }

    fn label(&mut self, xs: Vec<Instance>) -> Result<Vec<Prediction>, Stop> {
        self.mut_.predict(&xs).map_err(|e| fail(FailureKind::Oracle, e)).map(|zs| {
            for (x, z) in xs.into_iter().zip(&zs) {
                self.data.push(x, z.clone());
            }
            zs
        })
    }

    /// Rows drawn from the region the assumptions describe, falling back to
    /// uniform instances when sampling fails.
    fn fresh_rows(&mut self, n: usize) -> Result<usize, Stop> {
        let sampler = AssumeSampler::new(self.spec, self.schema);
        let mut added = 0;
        let before = self.data.len();
        while added < n {
            let (sample, rejections) = sampler.sample(&mut self.rng, 1000);
            self.suite.stats.sampling_rejections += rejections;
            let xs = match sample {
                Some(xs) => xs,
                None => vec![self.schema.random_instance(&mut self.rng)],
            };
            let take = xs.len().min(n - added);
            added += take;
            self.label(xs.into_iter().take(take).collect())?;
        }
        self.suite.stats.fresh_rows += added as u64;
        self.budget_used += added;
        Ok(self.data.len() - before)
    }

    fn execute(&mut self) -> Stop {
        for _ in 0..self.cfg.initial_train_size {
            let x = self.schema.random_instance(&mut self.rng);
            if let Err(stop) = self.label(vec![x]) {
                return stop;
            }
        }
        self.suite.stats.seed_rows = self.cfg.initial_train_size as u64;
        if self.cfg.bound_cex {
            self.bounds = match &self.cfg.bound_data {
                Some(rows) => bounds_of(rows),
                None => derive_bounds(&self.data),
            };
            if self.bounds.is_none() {
                return fail(FailureKind::Config, "no data to derive bounds from");
            }
        }
        let mut script = match self.train() {
            Ok(v) => v,
            Err(stop) => return stop,
        };
        let mut permanent: Vec<SExpr> = Vec::new();
        let mut blocks: Vec<SExpr> = Vec::new();
        let mut disagreements = 0usize;
        let mut fresh_allowed = true;
        let mut iteration = 0usize;
        loop {
            if self.budget_used >= self.cfg.max_samples {
                return Stop::Done("sample budget exhausted".into());
            }
            let mut all_blocks = permanent.clone();
            all_blocks.extend(blocks.iter().cloned());
            self.suite.stats.solver_calls += 1;
            let outcome = match solve(&script.with_blocks(&all_blocks), &self.cfg.solver) {
                Ok(o) => o,
                Err(e) => return fail(FailureKind::Solver, e),
            };
            let mut retrain = false;
            match outcome {
                SolveOutcome::Sat(a) => {
                    iteration += 1;
                    self.budget_used += 1;
                    self.suite.stats.candidates += 1;
                    fresh_allowed = true;
                    let instances: Vec<Instance> = a.instances.iter().map(|x| snap(self.schema, x)).collect();
                    let block = block_assignment(&a, &script);
                    let check = match check_candidate(self.mut_, self.spec, &instances) {
                        Ok(c) => c,
                        Err(e) => return fail(FailureKind::Oracle, e),
                    };
                    match check {
                        CandidateCheck::Valid(predictions) => {
                            for (x, z) in instances.iter().zip(&predictions) {
                                self.data.push(x.clone(), z.clone());
                            }
                            self.suite.counterexamples.push(Counterexample {
                                instances,
                                predictions,
                                surrogate_predictions: a.classes,
                                iteration,
                            });
                            permanent.push(block);
                            if !self.cfg.multi {
                                return Stop::Done("counterexample found".into());
                            }
                            if self.suite.counterexamples.len() >= self.cfg.max_samples {
                                return Stop::Done("test suite complete".into());
                            }
                        }
                        CandidateCheck::Invalid(predictions) => {
                            self.suite.stats.rejected += 1;
                            for (x, z) in instances.into_iter().zip(predictions) {
                                self.data.push(x, z);
                            }
                            blocks.push(block);
                            disagreements += 1;
                            retrain = disagreements >= self.cfg.retrain_trigger;
                        }
                    }
                }
                SolveOutcome::Unsat | SolveOutcome::Unknown(_) => {
                    if matches!(outcome, SolveOutcome::Unknown(_)) {
                        self.suite.stats.unknown_results += 1;
                    }
                    if disagreements > 0 {
                        retrain = true;
                    } else if fresh_allowed {
                        let remaining = self.cfg.max_samples - self.budget_used;
                        let n = self.cfg.initial_train_size.min(remaining / 2).max(1);
                        if let Err(stop) = self.fresh_rows(n) {
                            return stop;
                        }
                        fresh_allowed = false;
                        retrain = true;
                    } else {
                        let why = if matches!(outcome, SolveOutcome::Unknown(_)) { "solver gave up" } else { "no further counterexample" };
                        return Stop::Done(why.into());
                    }
                }
            }
            if retrain {
                self.suite.stats.retrains += 1;
                script = match self.train() {
                    Ok(v) => v,
                    Err(stop) => return stop,
                };
                blocks.clear();
                disagreements = 0;
            }
        }
    }
}

/// Runs the generation loop; failures end the run and are recorded in the
/// returned suite's stats alongside whatever was found before.
pub fn generate_test_suite(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    schema: &DatasetSchema,
    cfg: &EngineConfig,
) -> TestSuite {
    let start = Instant::now();
    let queries_before = mut_.query_count();
    let tester = format!("engine-{}", cfg.wbm.as_str());
    let mut run = Run {
        mut_,
        spec,
        schema,
        cfg,
        rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        data: LabeledSet::new(),
        bounds: None,
        suite: TestSuite::new(&spec.id, &tester, &spec.instance_vars),
        budget_used: 0,
    };
    let stop = match cfg.validate() {
        Ok(()) => run.execute(),
        Err(e) => fail(FailureKind::Config, e),
    };
    let mut suite = run.suite;
    match stop {
        Stop::Done(reason) => suite.stats.stop_reason = reason,
        Stop::Failed(f) => {
            suite.stats.stop_reason = format!("{:?} failure", f.kind).to_lowercase();
            suite.stats.failure = Some(f);
        }
    }
    suite.stats.queries = mut_.query_count() - queries_before;
    suite.stats.wall_time = start.elapsed();
    suite
}

/// Re-queries the model under test and counts suite entries that no longer
/// violate the property.
pub fn revalidate(mut_: &mut ModelUnderTest, spec: &PropertySpec, suite: &TestSuite) -> Result<usize, OracleError> {
    let mut failures = 0;
    for cex in &suite.counterexamples {
        let holds = spec.assumes_hold(&cex.instances).unwrap_or(false);
        let valid = holds && matches!(check_candidate(mut_, spec, &cex.instances)?, CandidateCheck::Valid(_));
        if !valid {
            failures += 1;
        }
    }
    Ok(failures)
}

#[cfg(test)]
mod tests;
