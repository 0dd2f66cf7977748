use std::collections::{BTreeSet, HashMap};
use std::time::Duration;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::sexpr::{atom, eq, int_lit, real_lit};
use super::*;
use crate::propdsl::{concept_property, fairness_property, trojan_property, Valuation};
use crate::rational::{int, ratio};
use crate::schema::{FeatureSpec, Instance, LabelSpec, Prediction};
use crate::surrogate::{dt_predict, mlp_forward, train_decision_tree, Layer, LabeledSet, TreeParams};

fn z3() -> Option<SolverConfig> {
    let cfg = SolverConfig::from_env();
    let probe = "(check-sat)\n";
    match solve_text(probe, &cfg) {
        Ok(_) => Some(cfg),
        Err(e) => {
            eprintln!("skipping: no SMT solver ({e})");
            None
        }
    }
}

fn binary(n: usize) -> DatasetSchema {
    DatasetSchema::new(
        (0..n).map(|i| FeatureSpec::binary(&format!("b{i}"))).collect(),
        vec![LabelSpec::boolean("lab")],
    )
    .unwrap()
}

fn pin(script: &mut SmtScript, x: &Instance, copy: usize) {
    for (i, v) in x.0.iter().enumerate() {
        let value = match script.feature_sorts[i] {
            Sort::Int => int_lit(&v.to_integer()),
            _ => real_lit(v),
        };
        script.assert(Section::Property, eq(atom(VarNames::feature(i, copy)), value));
    }
}

fn tree_script(tree: &DecisionTree, schema: &DatasetSchema) -> SmtScript {
    let mut script = SmtScript::new(schema, 1);
    script.add(Section::Surrogate, encode_decision_tree(tree, 1, schema));
    script
}

fn random_tree(schema: &DatasetSchema, seed: u64) -> DecisionTree {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = LabeledSet::new();
    for _ in 0..40 {
        data.push(schema.random_instance(&mut rng), Prediction::single(rng.gen_range(0..2)));
    }
    train_decision_tree(&data, schema, &TreeParams::default()).unwrap()
}

#[test]
fn solve_simple_scripts() {
    let Some(cfg) = z3() else { return };
    let sat = solve_text("(declare-const x Int)\n(assert (= x 3))\n(check-sat)\n(get-value (x))\n", &cfg).unwrap();
    let mut expected = std::collections::BTreeMap::new();
    expected.insert("x".to_string(), int(3));
    assert_eq!(sat, RawOutcome::Sat(expected));
    let unsat = solve_text("(assert false)\n(check-sat)\n(get-value (x))\n", &cfg).unwrap();
    assert_eq!(unsat, RawOutcome::Unsat);
}

#[test]
fn script_errors_are_reported() {
    let Some(cfg) = z3() else { return };
    let err = solve_text("(assert (= y 1))\n(check-sat)\n", &cfg).unwrap_err();
    assert!(matches!(err, SmtError::Script { .. }), "{err}");
}

#[test]
fn missing_solver_binary() {
    let cfg = SolverConfig::new("definitely-not-a-solver-binary -in");
    let err = solve_text("(check-sat)\n", &cfg).unwrap_err();
    assert!(matches!(err, SmtError::NotFound { .. }), "{err}");
    assert!(err.to_string().contains(SOLVER_ENV));
}

#[test]
fn timeouts_are_unknown() {
    let cfg = SolverConfig::new("sleep 5").with_timeout(Duration::from_millis(200));
    let out = solve_text("(check-sat)\n", &cfg).unwrap();
    assert!(matches!(out, RawOutcome::Unknown(_)));
}

#[test]
fn single_leaf_shape() {
    let schema = binary(2);
    let enc = encode_decision_tree(&DecisionTree::leaf(Prediction::single(0)), 1, &schema);
    let text: Vec<String> = enc.assertions.iter().map(|a| a.to_string()).collect();
    assert_eq!(text, vec!["s_1_0_1", "(=> s_1_0_1 (= class_0_1 0))"]);
    assert_eq!(enc.declarations, vec![("s_1_0_1".to_string(), Sort::Bool)]);
}

#[test]
fn inner_nodes_use_the_disjunctive_equivalence() {
    let schema = DatasetSchema::new(vec![FeatureSpec::integer("k", 0, 9)], vec![LabelSpec::boolean("lab")]).unwrap();
    let data: LabeledSet = [(Instance::from_ints(&[2]), Prediction::single(0)), (Instance::from_ints(&[7]), Prediction::single(1))]
        .into_iter()
        .collect();
    let tree = train_decision_tree(&data, &schema, &TreeParams::default()).unwrap();
    let enc = encode_decision_tree(&tree, 2, &schema);
    let text: Vec<String> = enc.assertions.iter().map(|a| a.to_string()).collect();
    let cond = "(<= (to_real f_0_2) (/ 9.0 2.0))";
    assert_eq!(text[0], "s_1_0_2");
    assert_eq!(
        text[1],
        format!("(or (and s_1_0_2 {cond} s_1_1_2) (and (or (not s_1_0_2) (not {cond})) (not s_1_1_2)))")
    );
    assert_eq!(text[2], "(=> s_1_1_2 (= class_0_2 0))");
}

#[test]
fn threshold_split_picks_the_left_leaf() {
    let Some(cfg) = z3() else { return };
    let schema = DatasetSchema::new(vec![FeatureSpec::integer("x0", 0, 9)], vec![LabelSpec::boolean("lab")]).unwrap();
    let data: LabeledSet = (0..10).map(|v| (Instance::from_ints(&[v]), Prediction::single(i64::from(v > 5)))).collect();
    let tree = train_decision_tree(&data, &schema, &TreeParams::default()).unwrap();
    let x = Instance::from_ints(&[3]);
    let expected = dt_predict(&tree, &x);
    for class in [0, 1] {
        let mut script = tree_script(&tree, &schema);
        pin(&mut script, &x, 1);
        script.assert(Section::Property, eq(atom("class_0_1"), int_lit(&class.into())));
        let sat = matches!(solve(&script, &cfg).unwrap(), SolveOutcome::Sat(_));
        assert_eq!(sat, expected == Prediction::single(class), "class {class}");
    }
}

#[test]
fn tree_encoding_agrees_with_dt_predict_exhaustively() {
    let Some(cfg) = z3() else { return };
    let schema = binary(4);
    for seed in 0..3 {
        let tree = random_tree(&schema, seed);
        for x in schema.enumerate_instances(16).unwrap() {
            let expected = dt_predict(&tree, &x);
            for class in [0, 1] {
                let mut script = tree_script(&tree, &schema);
                pin(&mut script, &x, 1);
                script.assert(Section::Property, eq(atom("class_0_1"), int_lit(&class.into())));
                let sat = matches!(solve(&script, &cfg).unwrap(), SolveOutcome::Sat(_));
                assert_eq!(sat, expected.0[0] == class, "seed {seed} x {x} class {class}");
            }
        }
    }
}

fn net_script(net: &MlpSurrogate, schema: &DatasetSchema, x: &Instance) -> SmtScript {
    let mut script = SmtScript::new(schema, 1);
    script.add(Section::Surrogate, encode_mlp(net, 1, schema));
    pin(&mut script, x, 1);
    script
}

fn unit_schema(n: usize, labels: Vec<LabelSpec>) -> DatasetSchema {
    DatasetSchema::new((0..n).map(|i| FeatureSpec::continuous(&format!("u{i}"), int(-1), int(1))).collect(), labels)
        .unwrap()
}

#[test]
fn relu_negative_branch_in_the_solver() {
    let Some(cfg) = z3() else { return };
    let schema = unit_schema(1, vec![LabelSpec::boolean("lab")]);
    let net = MlpSurrogate {
        layers: vec![
            Layer { weights: vec![vec![1000]], biases: vec![-1000] },
            Layer { weights: vec![vec![1000], vec![-1000]], biases: vec![0, 0] },
        ],
        mode: OutputMode::Argmax { classes: vec![0, 1] },
    };
    let mut script = net_script(&net, &schema, &Instance(vec![ratio(1, 2)]));
    script.extra_values = vec!["in_1_0_1".into(), "out_1_0_1".into()];
    let SolveOutcome::Sat(a) = solve(&script, &cfg).unwrap() else { panic!("expected sat") };
    assert_eq!(a.values["in_1_0_1"], ratio(-1, 2));
    assert_eq!(a.values["out_1_0_1"], int(0));
}

#[test]
fn two_class_heads_match_mlp_forward() {
    let Some(cfg) = z3() else { return };
    let schema = unit_schema(3, vec![LabelSpec::boolean("lab")]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    while checked < 10 {
        let sizes = [3, 4, 2];
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-3000..=3000)).collect()).collect(),
                biases: (0..w[1]).map(|_| rng.gen_range(-1000..=1000)).collect(),
            })
            .collect();
        let net = MlpSurrogate { layers, mode: OutputMode::Argmax { classes: vec![0, 1] } };
        let x = schema.random_instance(&mut rng);
        let (out, z) = mlp_forward(&net, &x);
        if out[0] == out[1] {
            continue;
        }
        let SolveOutcome::Sat(a) = solve(&net_script(&net, &schema, &x), &cfg).unwrap() else { panic!() };
        assert_eq!(a.classes[0], z);
        checked += 1;
    }
}

#[test]
fn multilabel_threshold_boundary() {
    let Some(cfg) = z3() else { return };
    let schema = unit_schema(1, vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")]);
    let net = MlpSurrogate {
        layers: vec![Layer { weights: vec![vec![1000], vec![-1000]], biases: vec![0, -1000] }],
        mode: OutputMode::Threshold { th: 0 },
    };
    let x = Instance(vec![int(0)]);
    let SolveOutcome::Sat(a) = solve(&net_script(&net, &schema, &x), &cfg).unwrap() else { panic!() };
    assert_eq!(a.classes[0], Prediction(vec![1, 0]));
    assert_eq!(a.classes[0], mlp_forward(&net, &x).1);
}

fn abcd() -> DatasetSchema {
    DatasetSchema::new(
        ["a", "b", "c", "d"].iter().map(|n| FeatureSpec::binary(n)).collect(),
        vec![LabelSpec::boolean("lab")],
    )
    .unwrap()
}

#[test]
fn fairness_formula_structure() {
    let schema = abcd();
    let spec = fairness_property(&schema, 1).unwrap();
    let script = encode_property(&spec, &schema, &Surrogate::Dt(DecisionTree::leaf(Prediction::single(0))), None).unwrap();
    let got: Vec<String> = script.section(Section::Property).iter().map(|e| e.to_string()).collect();
    assert_eq!(
        got,
        vec![
            "(= f_0_1 f_0_2)",
            "(not (= f_1_1 f_1_2))",
            "(= f_2_1 f_2_2)",
            "(= f_3_1 f_3_2)",
            "(not (= class_0_1 class_0_2))",
        ]
    );
    assert_eq!(script.section(Section::Surrogate).len(), 4);
}

#[test]
fn trivial_concept_is_unsat() {
    let Some(cfg) = z3() else { return };
    let schema = unit_schema(2, vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")]);
    let spec = concept_property(&schema, Condition::Bool(true)).unwrap();
    let surrogate = Surrogate::Dt(DecisionTree::leaf(Prediction(vec![1, 0])));
    let script = encode_property(&spec, &schema, &surrogate, None).unwrap();
    assert_eq!(solve(&script, &cfg).unwrap(), SolveOutcome::Unsat);
}

#[test]
fn fully_pinned_trojan_on_a_constant_surrogate_is_unsat() {
    let Some(cfg) = z3() else { return };
    let schema = binary(3);
    let trigger = Instance::from_ints(&[1, 0, 1]);
    let z = Prediction::single(1);
    let spec = trojan_property(&schema, &[0, 1, 2], &trigger, &z).unwrap();
    let script = encode_property(&spec, &schema, &Surrogate::Dt(DecisionTree::leaf(z)), None).unwrap();
    assert_eq!(solve(&script, &cfg).unwrap(), SolveOutcome::Unsat);
}

fn sensitive_only_tree(schema: &DatasetSchema, s: usize) -> DecisionTree {
    let data: LabeledSet = schema
        .enumerate_instances(64)
        .unwrap()
        .into_iter()
        .map(|x| {
            let z = Prediction::single(x.0[s].to_integer().try_into().unwrap());
            (x, z)
        })
        .collect();
    train_decision_tree(&data, schema, &TreeParams::default()).unwrap()
}

#[test]
fn fairness_counterexample_differs_only_at_the_sensitive_feature() {
    let Some(cfg) = z3() else { return };
    let schema = abcd();
    let tree = sensitive_only_tree(&schema, 1);
    let spec = fairness_property(&schema, 1).unwrap();
    let surrogate = Surrogate::Dt(tree);
    let script = encode_property(&spec, &schema, &surrogate, None).unwrap();
    let SolveOutcome::Sat(a) = solve(&script, &cfg).unwrap() else { panic!("expected sat") };
    let (x, y) = (&a.instances[0], &a.instances[1]);
    for i in 0..4 {
        assert_eq!(x.0[i] == y.0[i], i != 1, "feature {i}");
    }
    let preds = [surrogate.predict(x), surrogate.predict(y)];
    assert_eq!(a.classes, preds.to_vec());
    assert!(spec.is_violated_by(&a.instances, &preds).unwrap());
}

#[test]
fn blocking_clause_shape() {
    let schema = binary(2);
    let script = SmtScript::new(&schema, 1);
    let a = Assignment {
        instances: vec![Instance::from_ints(&[1, 0])],
        classes: vec![Prediction::single(0)],
        values: Default::default(),
        raw: String::new(),
    };
    assert_eq!(block_assignment(&a, &script).to_string(), "(not (and (= f_0_1 1) (= f_1_1 0)))");
}

#[test]
fn blocking_enumerates_every_solution_then_unsat() {
    let Some(cfg) = z3() else { return };
    let schema = DatasetSchema::new(vec![FeatureSpec::integer("k", 0, 20)], vec![LabelSpec::boolean("lab")]).unwrap();
    let mut script = SmtScript::new(&schema, 1);
    script.assert(Section::Property, app("<=", vec![atom("f_0_1"), atom("4")]));
    let mut blocks = Vec::new();
    let mut seen = BTreeSet::new();
    loop {
        match solve(&script.with_blocks(&blocks), &cfg).unwrap() {
            SolveOutcome::Sat(a) => {
                assert!(seen.insert(a.instances[0].clone()), "repeated {}", a.instances[0]);
                blocks.push(block_assignment(&a, &script));
            }
            SolveOutcome::Unsat => break,
            SolveOutcome::Unknown(why) => panic!("{why}"),
        }
    }
    assert_eq!(seen.len(), 5);
}

#[test]
fn bounds_restrict_features() {
    let Some(cfg) = z3() else { return };
    let schema = unit_schema(2, vec![LabelSpec::boolean("dog"), LabelSpec::boolean("animal")]);
    let phi = crate::propdsl::parse_concept_formula("dog => animal", &schema, "x").unwrap();
    let spec = concept_property(&schema, phi).unwrap();
    let surrogate = Surrogate::Dt(DecisionTree::leaf(Prediction(vec![1, 0])));
    let bounds = vec![(ratio(1, 4), ratio(1, 3)), (int(-1), int(0))];
    let script = encode_property(&spec, &schema, &surrogate, Some(&bounds)).unwrap();
    let SolveOutcome::Sat(a) = solve(&script, &cfg).unwrap() else { panic!() };
    for (v, (lo, hi)) in a.instances[0].0.iter().zip(&bounds) {
        assert!(v >= lo && v <= hi);
    }
    assert!(encode_property(&spec, &schema, &surrogate, Some(&bounds[..1])).is_err());
}

#[test]
fn scripts_are_deterministic_and_dumped() {
    let Some(cfg) = z3() else { return };
    let schema = abcd();
    let spec = fairness_property(&schema, 2).unwrap();
    let surrogate = Surrogate::Dt(sensitive_only_tree(&schema, 2));
    let a = encode_property(&spec, &schema, &surrogate, None).unwrap().text();
    let b = encode_property(&spec, &schema, &surrogate, None).unwrap().text();
    assert_eq!(a, b);
    let dir = std::env::temp_dir().join(format!("smt-dump-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let cfg = cfg.with_dump_dir(&dir);
    solve_text(&a, &cfg).unwrap();
    solve_text(&a, &cfg).unwrap();
    let files: Vec<_> = std::fs::read_dir(&dir).unwrap().collect();
    assert_eq!(files.len(), 2);
    assert_eq!(std::fs::read_to_string(dir.join("query-00000.smt2")).unwrap(), a);
    let _ = std::fs::remove_dir_all(&dir);
}

fn sat_satisfies_property_on_surrogate(seed: u64, cfg: &SolverConfig) -> Result<(), TestCaseError> {
    let schema = binary(3);
    let tree = random_tree(&schema, seed);
    let surrogate = Surrogate::Dt(tree);
    let spec = fairness_property(&schema, (seed % 3) as usize).unwrap();
    let script = encode_property(&spec, &schema, &surrogate, None).unwrap();
    if let SolveOutcome::Sat(a) = solve(&script, cfg).unwrap() {
        let preds: Vec<Prediction> = a.instances.iter().map(|x| surrogate.predict(x)).collect();
        prop_assert!(spec.is_violated_by(&a.instances, &preds).unwrap());
        let v = Valuation { vars: &spec.instance_vars, instances: &a.instances, predictions: &a.classes };
        prop_assert!(spec.assume_condition().eval(&v).unwrap());
    } else {
        let brute = schema.enumerate_instances(8).unwrap();
        let mut preds = HashMap::new();
        for x in &brute {
            preds.insert(x.clone(), surrogate.predict(x));
        }
        for x in &brute {
            for y in &brute {
                let pair = [x.clone(), y.clone()];
                let z = [preds[x].clone(), preds[y].clone()];
                prop_assert!(!spec.is_violated_by(&pair, &z).unwrap());
            }
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn property_soundness_on_the_surrogate(seed in any::<u64>()) {
        if let Some(cfg) = z3() {
            sat_satisfies_property_on_surrogate(seed, &cfg)?;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn neuron_bounds_contain_every_pre_activation(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let schema = DatasetSchema::new(
            vec![
                FeatureSpec::continuous("u", int(-2), ratio(3, 2)),
                FeatureSpec::binary("b"),
                FeatureSpec::categorical("c", &[-3, 0, 5]),
            ],
            vec![LabelSpec::boolean("lab")],
        )
        .unwrap();
        let sizes = [3, 4, 3, 2];
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                weights: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-10_000..=10_000)).collect()).collect(),
                biases: (0..w[1]).map(|_| rng.gen_range(-10_000..=10_000)).collect(),
            })
            .collect();
        let net = MlpSurrogate { layers, mode: OutputMode::Argmax { classes: vec![0, 1] } };
        let bounds = neuron_bounds(&net, &schema);
        for _ in 0..20 {
            let x = schema.random_instance(&mut rng);
            for (layer, trace) in bounds.iter().zip(net.trace(&x)) {
                for ((lo, hi), v) in layer.iter().zip(&trace.pre) {
                    prop_assert!(lo <= v && v <= hi);
                }
            }
        }
    }
}
