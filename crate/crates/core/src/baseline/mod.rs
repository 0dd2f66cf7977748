//! Reference testers: uniform random testing and adaptive random testing.

mod sampler;

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::{check_candidate, CandidateCheck, Counterexample, Failure, FailureKind, TestSuite};
use crate::oracle::ModelUnderTest;
use crate::propdsl::PropertySpec;
use crate::schema::{DatasetSchema, Instance};

pub use sampler::AssumeSampler;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaselineKind {
    Random,
    Art,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Art => "art",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BaselineConfig {
    /// Number of candidates executed on the model under test.
    pub budget: usize,
    pub kind: BaselineKind,
    /// Candidates drawn per ART step.
    pub art_pool: usize,
    pub seed: u64,
    /// Keep testing after the first violation.
    pub multi: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { budget: 1000, kind: BaselineKind::Random, art_pool: 10, seed: 0, multi: false }
    }
}

/// Draws rejected per executed candidate before sampling is declared hopeless.
pub const REJECTIONS_PER_SAMPLE: u64 = 1000;

pub fn run_baseline(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    schema: &DatasetSchema,
    cfg: &BaselineConfig,
) -> TestSuite {
    let start = Instant::now();
    let queries_before = mut_.query_count();
    let mut suite = TestSuite::new(&spec.id, cfg.kind.as_str(), &spec.instance_vars);
    let result = if cfg.budget == 0 || cfg.art_pool == 0 {
        Err(Failure { kind: FailureKind::Config, message: "budget and art_pool must be positive".into() })
    } else {
        execute(mut_, spec, schema, cfg, &mut suite)
    };
    match result {
        Ok(reason) => suite.stats.stop_reason = reason.into(),
        Err(f) => {
            suite.stats.stop_reason = format!("{:?} failure", f.kind).to_lowercase();
            suite.stats.failure = Some(f);
        }
    }
    suite.stats.queries = mut_.query_count() - queries_before;
    suite.stats.wall_time = start.elapsed();
    suite
}

pub fn random_test(mut_: &mut ModelUnderTest, spec: &PropertySpec, schema: &DatasetSchema, cfg: &BaselineConfig) -> TestSuite {
    run_baseline(mut_, spec, schema, &BaselineConfig { kind: BaselineKind::Random, ..cfg.clone() })
}

pub fn adaptive_random_test(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    schema: &DatasetSchema,
    cfg: &BaselineConfig,
) -> TestSuite {
    run_baseline(mut_, spec, schema, &BaselineConfig { kind: BaselineKind::Art, ..cfg.clone() })
}

fn features(xs: &[Instance]) -> Vec<f64> {
    xs.iter().flat_map(|x| x.to_f64()).collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Index of the candidate farthest from its nearest executed point; the
/// first candidate wins ties and an empty executed set.
pub fn art_select(executed: &[Vec<f64>], candidates: &[Vec<f64>]) -> usize {
    if executed.is_empty() {
        return 0;
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let score = executed.iter().map(|e| distance(e, c)).fold(f64::INFINITY, f64::min);
        if score > best_score {
            best = i;
            best_score = score;
        }
    }
    best
}

fn execute(
    mut_: &mut ModelUnderTest,
    spec: &PropertySpec,
    schema: &DatasetSchema,
    cfg: &BaselineConfig,
    suite: &mut TestSuite,
) -> Result<&'static str, Failure> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sampler = AssumeSampler::new(spec, schema);
    let limit = REJECTIONS_PER_SAMPLE.saturating_mul(cfg.budget as u64);
    let mut executed: Vec<Vec<f64>> = Vec::new();
    let pool = match cfg.kind {
        BaselineKind::Random => 1,
        BaselineKind::Art => cfg.art_pool,
    };
    for step in 1..=cfg.budget {
        let mut candidates = Vec::with_capacity(pool);
        while candidates.len() < pool {
            let left = limit.saturating_sub(suite.stats.sampling_rejections);
            let (sample, rejections) = sampler.sample(&mut rng, left.max(1));
            suite.stats.sampling_rejections += rejections;
            match sample {
                Some(xs) => candidates.push(xs),
                None => {
                    return Err(Failure {
                        kind: FailureKind::Sampling,
                        message: "assumptions unsatisfiable by sampling".into(),
                    })
                }
            }
        }
        let vectors: Vec<Vec<f64>> = candidates.iter().map(|c| features(c)).collect();
        let pick = art_select(&executed, &vectors);
        let instances = candidates.swap_remove(pick);
        if cfg.kind == BaselineKind::Art {
            executed.push(vectors[pick].clone());
        }
        suite.stats.candidates += 1;
        let check = check_candidate(mut_, spec, &instances)
            .map_err(|e| Failure { kind: FailureKind::Oracle, message: e.to_string() })?;
        match check {
            CandidateCheck::Valid(predictions) => {
                let duplicate = suite.counterexamples.iter().any(|c| c.instances == instances);
                if !duplicate {
                    suite.counterexamples.push(Counterexample {
                        instances,
                        predictions,
                        surrogate_predictions: Vec::new(),
                        iteration: step,
                    });
                }
                if !cfg.multi {
                    return Ok("counterexample found");
                }
            }
            CandidateCheck::Invalid(_) => suite.stats.rejected += 1,
        }
    }
    Ok("sample budget exhausted")
}
