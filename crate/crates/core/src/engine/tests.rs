use std::collections::BTreeSet;

use super::*;
use crate::harness::{bounded_training_rows, constant_fairness, planted_bounded, planted_trojan, planted_unfairness, trojan_exceptions};
use crate::propdsl::{concept_property, fairness_property, parse_concept_formula};
use crate::rational::int;
use crate::schema::{FeatureSpec, LabelSpec};
use crate::smt::SolverConfig;
use crate::BuiltinModel;

fn solver() -> Option<SolverConfig> {
    let cfg = SolverConfig::from_env();
    let probe = crate::smt::solve_text("(check-sat)\n", &cfg);
    probe.is_ok().then_some(cfg)
}

fn config(wbm: SurrogateKind, seed: u64, max_samples: usize, solver: SolverConfig) -> EngineConfig {
    EngineConfig { wbm, seed, max_samples, solver, ..EngineConfig::default() }
}

#[test]
fn derive_bounds_is_componentwise() {
    let data: LabeledSet = [(Instance::from_ints(&[1, 5]), Prediction::single(0)), (Instance::from_ints(&[3, 2]), Prediction::single(1))]
        .into_iter()
        .collect();
    assert_eq!(derive_bounds(&data).unwrap(), vec![(int(1), int(3)), (int(2), int(5))]);
    let single: LabeledSet = [(Instance::from_ints(&[4, 4]), Prediction::single(0))].into_iter().collect();
    assert_eq!(derive_bounds(&single).unwrap(), vec![(int(4), int(4)), (int(4), int(4))]);
    assert!(derive_bounds(&LabeledSet::new()).is_none());
}

#[test]
fn check_candidate_fairness_verdicts() {
    let task = planted_unfairness();
    let mut m = task.mut_();
    let same = [Instance::from_ints(&[0, 1, 0, 0]), Instance::from_ints(&[0, 1, 0, 0])];
    assert!(matches!(check_candidate(&mut m, &task.spec, &same).unwrap(), CandidateCheck::Invalid(_)));
    let pair = [Instance::from_ints(&[0, 0, 1, 1]), Instance::from_ints(&[0, 1, 1, 1])];
    assert_eq!(
        check_candidate(&mut m, &task.spec, &pair).unwrap(),
        CandidateCheck::Valid(vec![Prediction::single(0), Prediction::single(1)])
    );
    let constant = constant_fairness();
    let mut m = constant.mut_();
    assert!(matches!(check_candidate(&mut m, &constant.spec, &pair).unwrap(), CandidateCheck::Invalid(_)));
}

#[test]
fn check_candidate_concept_dog_without_animal() {
    let schema = DatasetSchema::new(
        vec![FeatureSpec::binary("f")],
        vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")],
    )
    .unwrap();
    let phi = parse_concept_formula("dog => animal", &schema, "x").unwrap();
    let spec = concept_property(&schema, phi).unwrap();
    let mut m = ModelUnderTest::builtin(BuiltinModel::Constant(Prediction(vec![1, 0])), schema);
    let x = [Instance::from_ints(&[0])];
    assert!(matches!(check_candidate(&mut m, &spec, &x).unwrap(), CandidateCheck::Valid(_)));
}

#[test]
fn rejects_bad_config() {
    let task = planted_unfairness();
    let mut m = task.mut_();
    let cfg = EngineConfig { max_samples: 0, ..EngineConfig::default() };
    let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &cfg);
    assert_eq!(suite.stats.failure.unwrap().kind, FailureKind::Config);
}

#[test]
fn missing_solver_is_recorded_as_failure() {
    let task = planted_unfairness();
    let mut m = task.mut_();
    let cfg = config(SurrogateKind::Dt, 0, 10, SolverConfig::new("/nonexistent/solver-binary"));
    let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &cfg);
    assert!(!suite.found());
    assert_eq!(suite.stats.failure.unwrap().kind, FailureKind::Solver);
}

#[test]
fn planted_unfairness_is_found() {
    let Some(solver) = solver() else { return };
    let task = planted_unfairness();
    for wbm in [SurrogateKind::Dt, SurrogateKind::Nn] {
        let mut m = task.mut_();
        let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &config(wbm, 3, 100, solver.clone()));
        assert!(suite.found(), "{wbm:?}: {}", suite.summary());
        let cex = &suite.counterexamples[0];
        assert_ne!(cex.instances[0].0[1], cex.instances[1].0[1]);
        for f in [0, 2, 3] {
            assert_eq!(cex.instances[0].0[f], cex.instances[1].0[f]);
        }
        assert_ne!(cex.predictions[0], cex.predictions[1]);
    }
}

#[test]
fn constant_model_gives_empty_suite() {
    let Some(solver) = solver() else { return };
    let task = constant_fairness();
    let mut m = task.mut_();
    let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &config(SurrogateKind::Dt, 1, 100, solver));
    assert!(!suite.found());
    assert!(suite.stats.failure.is_none());
}

#[test]
fn poisoned_trojan_exception_is_found() {
    let Some(solver) = solver() else { return };
    let task = planted_trojan(true);
    let mut m = task.mut_();
    let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &config(SurrogateKind::Dt, 5, 200, solver));
    assert!(suite.found(), "{}", suite.summary());
    assert!(trojan_exceptions().contains(&suite.counterexamples[0].instances[0]));
}

#[test]
fn multi_mode_is_sound_distinct_and_within_budget() {
    let Some(solver) = solver() else { return };
    let task = planted_unfairness();
    let mut m = task.mut_();
    let cfg = EngineConfig { multi: true, ..config(SurrogateKind::Dt, 11, 50, solver) };
    let suite = generate_test_suite(&mut m, &task.spec, &task.schema, &cfg);
    assert!(suite.counterexamples.len() >= 10, "{}", suite.summary());
    let distinct: BTreeSet<_> = suite.counterexamples.iter().map(|c| c.instances.clone()).collect();
    assert_eq!(distinct.len(), suite.counterexamples.len());
    let mut fresh = task.mut_();
    assert_eq!(revalidate(&mut fresh, &task.spec, &suite).unwrap(), 0);
    let s = &suite.stats;
    assert!(s.candidates + s.fresh_rows <= cfg.max_samples as u64);
    assert_eq!(s.seed_rows, cfg.initial_train_size as u64);
}

#[test]
fn runs_are_deterministic() {
    let Some(solver) = solver() else { return };
    let task = planted_unfairness();
    let multi_dt = EngineConfig { multi: true, ..config(SurrogateKind::Dt, 2, 30, solver.clone()) };
    let single_nn = config(SurrogateKind::Nn, 2, 20, solver);
    for cfg in [multi_dt, single_nn] {
        let a = generate_test_suite(&mut task.mut_(), &task.spec, &task.schema, &cfg);
        let b = generate_test_suite(&mut task.mut_(), &task.spec, &task.schema, &cfg);
        assert_eq!(a.to_json_lines(), b.to_json_lines());
    }
}

#[test]
fn bounded_counterexamples_stay_inside_bounds() {
    let Some(solver) = solver() else { return };
    let task = planted_bounded();
    let cfg = EngineConfig {
        multi: true,
        bound_cex: true,
        bound_data: Some(bounded_training_rows()),
        ..config(SurrogateKind::Dt, 4, 40, solver)
    };
    let suite = generate_test_suite(&mut task.mut_(), &task.spec, &task.schema, &cfg);
    assert!(suite.found(), "{}", suite.summary());
    for cex in &suite.counterexamples {
        for x in &cex.instances {
            assert!(x.0[0] >= int(2) && x.0[0] <= int(7), "{x}");
        }
    }
}

#[test]
fn fairness_on_continuous_schema_finds_pairs() {
    let Some(solver) = solver() else { return };
    let schema = DatasetSchema::new(
        vec![FeatureSpec::continuous("a", int(0), int(1)), FeatureSpec::binary("s")],
        vec![LabelSpec::boolean("c")],
    )
    .unwrap();
    let spec = fairness_property(&schema, 1).unwrap();
    let vars = ["x".to_string()];
    let cond = crate::parse_condition("x[0] > 1/2 and x[1] == 1", &[], &schema, &vars).unwrap();
    let model = BuiltinModel::rule(&schema, "x", vec![(cond, Prediction::single(1))], Prediction::single(0)).unwrap();
    let mut m = ModelUnderTest::builtin(model, schema.clone());
    let suite = generate_test_suite(&mut m, &spec, &schema, &config(SurrogateKind::Dt, 0, 100, solver));
    assert!(suite.found(), "{}", suite.summary());
    assert!(suite.counterexamples[0].instances[0].0[0] > crate::rational::ratio(1, 2));
}
