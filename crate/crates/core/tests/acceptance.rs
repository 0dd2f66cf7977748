//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use mlcheck_core::harness::{
    bench, bounded_training_rows, constant_fairness, planted_bounded, planted_concept, planted_trojan,
    planted_unfairness, trojan_exceptions, Task, Tester,
};
use mlcheck_core::rational::int;
use mlcheck_core::smt::sexpr::{atom, eq, eval_number, int_lit, parse_all, real_lit, SExpr};
use mlcheck_core::smt::{
    block_assignment, encode_decision_tree, encode_mlp, encode_property, solve, solve_text, Section, SmtScript,
    SolveOutcome, SolverConfig, Sort, VarNames,
};
use mlcheck_core::surrogate::{dt_predict, mlp_forward, train_decision_tree, Layer, MlpSurrogate, OutputMode, TreeParams};
use mlcheck_core::{
    fairness_property, generate_test_suite, revalidate, DatasetSchema, DecisionTree, EngineConfig, FeatureSpec,
    Instance, LabelSpec, LabeledSet, Prediction, Surrogate, SurrogateKind, TestSuite,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Runs `base` once, then each query between push and pop, returning the
/// solver's response text.
fn incremental(cfg: &SolverConfig, base: &str, queries: &[String]) -> String {
    let mut text = String::from(base);
    for q in queries {
        text.push_str("(push 1)\n");
        text.push_str(q);
        text.push_str("(pop 1)\n");
    }
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cfg.command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .expect("solver starts");
    let mut stdin = child.stdin.take().unwrap();
    let writer = std::thread::spawn(move || stdin.write_all(text.as_bytes()));
    let mut out = String::new();
    child.stdout.take().unwrap().read_to_string(&mut out).unwrap();
    writer.join().unwrap().unwrap();
    child.wait().unwrap();
    out
}

/// Declarations and assertions of a script without its trailing queries.
fn script_body(script: &SmtScript) -> String {
    let text = script.text();
    let end = text.find("(check-sat)").unwrap();
    text[..end].to_string()
}

fn pin_terms(script: &SmtScript, x: &Instance) -> String {
    x.0.iter()
        .enumerate()
        .map(|(i, v)| {
            let value = match script.feature_sorts[i] {
                Sort::Int => int_lit(&v.to_integer()),
                _ => real_lit(v),
            };
            format!("(assert {})\n", eq(atom(VarNames::feature(i, 1)), value))
        })
        .collect()
}

fn binary_schema(n: usize, labels: Vec<LabelSpec>) -> DatasetSchema {
    DatasetSchema::new((0..n).map(|i| FeatureSpec::binary(&format!("b{i}"))).collect(), labels).unwrap()
}

fn criterion_1(cfg: &SolverConfig) -> Outcome {
    let start = Instant::now();
    let schema = binary_schema(6, vec![LabelSpec::boolean("lab")]);
    let all = schema.enumerate_instances(64).unwrap();
    let mut checks = 0;
    let mut mismatches = Vec::new();
    let mut depths = BTreeSet::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut data = LabeledSet::new();
        for _ in 0..48 {
            data.push(schema.random_instance(&mut rng), Prediction::single(rng.gen_range(0..2)));
        }
        let tree = train_decision_tree(&data, &schema, &TreeParams::default()).unwrap();
        depths.insert(tree.depth());
        let mut script = SmtScript::new(&schema, 1);
        script.add(Section::Surrogate, encode_decision_tree(&tree, 1, &schema));
        let mut queries = Vec::new();
        let mut expected = Vec::new();
        for x in &all {
            let predicted = dt_predict(&tree, x).0[0];
            for class in [0i64, 1] {
                queries.push(format!("{}(assert (= class_0_1 {class}))\n(check-sat)\n", pin_terms(&script, x)));
                expected.push(if class == predicted { "sat" } else { "unsat" });
            }
        }
        let out = incremental(cfg, &script_body(&script), &queries);
        let got: Vec<&str> = out.split_whitespace().collect();
        if got.len() != expected.len() {
            return Err(format!("tree {seed}: expected {} answers, solver said {out:?}", expected.len()));
        }
        for (k, (g, e)) in got.iter().zip(&expected).enumerate() {
            checks += 1;
            if g != e {
                mismatches.push(format!("tree {seed} query {k}: {g} vs {e}"));
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        mismatches.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{checks} checks over 20 trees (depths {depths:?}), {} mismatches, {:.1}s",
            mismatches.len(),
            elapsed.as_secs_f64()
        ),
    )
}

fn random_net(rng: &mut ChaCha8Rng) -> MlpSurrogate {
    let sizes = [5usize, 10, 10, 3];
    let layers = sizes
        .windows(2)
        .map(|w| Layer {
            weights: (0..w[1]).map(|_| (0..w[0]).map(|_| rng.gen_range(-10_000..=10_000)).collect()).collect(),
            biases: (0..w[1]).map(|_| rng.gen_range(-10_000..=10_000)).collect(),
        })
        .collect();
    MlpSurrogate { layers, mode: OutputMode::Argmax { classes: vec![0, 1, 2] } }
}

fn criterion_2(cfg: &SolverConfig) -> Outcome {
    let features = (0..5).map(|i| FeatureSpec::continuous(&format!("u{i}"), int(-1), int(1))).collect();
    let schema = DatasetSchema::new(features, vec![LabelSpec::new("c", &[0, 1, 2])]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cases = 0;
    let mut class_errors = 0;
    let mut value_errors = 0;
    for _ in 0..20 {
        let net = random_net(&mut rng);
        let mut script = SmtScript::new(&schema, 1);
        script.add(Section::Surrogate, encode_mlp(&net, 1, &schema));
        let mut names = vec![VarNames::class(0, 1)];
        for (l, layer) in net.layers.iter().enumerate() {
            names.extend((0..layer.outputs()).map(|i| VarNames::neuron_in(l + 1, i, 1)));
        }
        let mut inputs = Vec::new();
        while inputs.len() < 50 {
            let x = schema.random_instance(&mut rng);
            let (out, _) = mlp_forward(&net, &x);
            let max = out.iter().max().unwrap();
            if out.iter().filter(|v| *v == max).count() == 1 {
                inputs.push(x);
            }
        }
        let queries: Vec<String> = inputs
            .iter()
            .map(|x| format!("{}(check-sat)\n(get-value ({}))\n", pin_terms(&script, x), names.join(" ")))
            .collect();
        let out = incremental(cfg, &script_body(&script), &queries);
        let items = parse_all(&out).map_err(|e| format!("unparsable solver output: {e}"))?;
        if items.len() != 2 * inputs.len() {
            return Err(format!("expected {} responses, got {}", 2 * inputs.len(), items.len()));
        }
        for (x, pair) in inputs.iter().zip(items.chunks(2)) {
            cases += 1;
            if pair[0] != atom("sat") {
                class_errors += 1;
                continue;
            }
            let SExpr::List(entries) = &pair[1] else { return Err(format!("bad get-value reply {}", pair[1])) };
            let values: BTreeMap<String, _> = entries
                .iter()
                .filter_map(|e| match e {
                    SExpr::List(kv) if kv.len() == 2 => Some((kv[0].to_string(), eval_number(&kv[1])?)),
                    _ => None,
                })
                .collect();
            let (_, z) = mlp_forward(&net, x);
            if values.get(&names[0]) != Some(&int(z.0[0])) {
                class_errors += 1;
            }
            for (l, t) in net.trace(x).iter().enumerate() {
                for (i, pre) in t.pre.iter().enumerate() {
                    if values.get(&VarNames::neuron_in(l + 1, i, 1)) != Some(pre) {
                        value_errors += 1;
                    }
                }
            }
        }
    }
    check(
        cases == 1000 && class_errors == 0 && value_errors == 0,
        format!("{cases} net/input cases, {class_errors} class mismatches, {value_errors} pre-activation mismatches"),
    )
}

fn criterion_3() -> Outcome {
    let schema = DatasetSchema::new(
        ["a", "b", "c", "d"].iter().map(|n| FeatureSpec::binary(n)).collect(),
        vec![LabelSpec::boolean("class")],
    )
    .unwrap();
    let spec = fairness_property(&schema, 1).unwrap();
    let surrogate = Surrogate::Dt(DecisionTree::leaf(Prediction::single(0)));
    let script = encode_property(&spec, &schema, &surrogate, None).map_err(|e| e.to_string())?;
    let mut rename = BTreeMap::new();
    for (i, n) in ["a", "b", "c", "d"].iter().enumerate() {
        for c in 1..=2 {
            rename.insert(VarNames::feature(i, c), format!("{n}{c}"));
        }
    }
    rename.insert(VarNames::class(0, 1), "class1".into());
    rename.insert(VarNames::class(0, 2), "class2".into());
    fn apply(e: &SExpr, map: &BTreeMap<String, String>) -> SExpr {
        match e {
            SExpr::Atom(a) => SExpr::Atom(map.get(a).cloned().unwrap_or_else(|| a.clone())),
            SExpr::List(items) => SExpr::List(items.iter().map(|i| apply(i, map)).collect()),
        }
    }
    let conjuncts: Vec<SExpr> = script.section(Section::Property).into_iter().map(|e| apply(e, &rename)).collect();
    let got = SExpr::List(std::iter::once(atom("and")).chain(conjuncts).collect());
    let golden =
        parse_all("(and (= a1 a2) (not (= b1 b2)) (= c1 c2) (= d1 d2) (not (= class1 class2)))").unwrap().remove(0);
    check(got == golden, format!("property conjunction {got}"))
}

fn engine(wbm: SurrogateKind, seed: u64, max_samples: usize, solver: &SolverConfig) -> EngineConfig {
    EngineConfig { wbm, seed, max_samples, solver: solver.clone(), ..EngineConfig::default() }
}

fn run(task: &Task, cfg: &EngineConfig, log: &mut Vec<(Task, TestSuite)>) -> (TestSuite, Duration) {
    let start = Instant::now();
    let suite = generate_test_suite(&mut task.mut_(), &task.spec, &task.schema, cfg);
    let elapsed = start.elapsed();
    log.push((task.clone(), suite.clone()));
    (suite, elapsed)
}

fn failures(suite: &TestSuite) -> Option<String> {
    suite.stats.failure.as_ref().map(|f| format!("{:?}: {}", f.kind, f.message))
}

fn criterion_4(solver: &SolverConfig, log: &mut Vec<(Task, TestSuite)>) -> Outcome {
    let task = planted_unfairness();
    let mut single_hits = 0;
    let mut multi_ok = 0;
    let mut slowest = Duration::ZERO;
    let mut min_multi = usize::MAX;
    for seed in 0..20 {
        let (suite, t) = run(&task, &engine(SurrogateKind::Dt, seed, 100, solver), log);
        if let Some(f) = failures(&suite) {
            return Err(format!("seed {seed} failed: {f}"));
        }
        slowest = slowest.max(t);
        single_hits += usize::from(suite.found());
        let cfg = EngineConfig { multi: true, ..engine(SurrogateKind::Dt, seed, 50, solver) };
        let (suite, t) = run(&task, &cfg, log);
        slowest = slowest.max(t);
        let distinct: BTreeSet<_> = suite.counterexamples.iter().map(|c| &c.instances).collect();
        min_multi = min_multi.min(distinct.len());
        multi_ok += usize::from(distinct.len() >= 10 && distinct.len() == suite.counterexamples.len());
    }
    check(
        single_hits == 20 && multi_ok == 20 && slowest < Duration::from_secs(30),
        format!(
            "single mode found in {single_hits}/20 seeds; multi mode >= 10 distinct in {multi_ok}/20 (min {min_multi}); slowest run {:.2}s",
            slowest.as_secs_f64()
        ),
    )
}

fn criterion_5_runs(solver: &SolverConfig, log: &mut Vec<(Task, TestSuite)>) -> Result<usize, String> {
    let task = constant_fairness();
    let mut nonempty = 0;
    for wbm in [SurrogateKind::Dt, SurrogateKind::Nn] {
        for seed in 0..20 {
            let (suite, _) = run(&task, &engine(wbm, seed, 100, solver), log);
            if let Some(f) = failures(&suite) {
                return Err(format!("{wbm:?} seed {seed} failed: {f}"));
            }
            nonempty += usize::from(suite.found());
        }
    }
    Ok(nonempty)
}

fn criterion_6(solver: &SolverConfig, log: &mut Vec<(Task, TestSuite)>) -> Outcome {
    let task = planted_trojan(true);
    let exceptions = trojan_exceptions();
    let mut hits = 0;
    for seed in 0..20 {
        let (suite, _) = run(&task, &engine(SurrogateKind::Dt, seed, 200, solver), log);
        if let Some(f) = failures(&suite) {
            return Err(format!("seed {seed} failed: {f}"));
        }
        hits += usize::from(suite.counterexamples.iter().any(|c| exceptions.contains(&c.instances[0])));
    }
    let clean = planted_trojan(false);
    let mut clean_nonempty = 0;
    for seed in 0..20 {
        let (suite, _) = run(&clean, &engine(SurrogateKind::Dt, seed, 200, solver), log);
        clean_nonempty += usize::from(suite.found() || suite.failed());
    }
    check(
        hits >= 18 && clean_nonempty == 0,
        format!("exception found in {hits}/20 seeds; fully poisoned table gave {clean_nonempty}/20 non-empty suites"),
    )
}

fn criterion_7(solver: &SolverConfig, log: &mut Vec<(Task, TestSuite)>) -> Outcome {
    let task = planted_concept("dog => animal");
    let trivial = planted_concept("true");
    let mut report = Vec::new();
    let mut ok = true;
    for wbm in [SurrogateKind::Dt, SurrogateKind::Nn] {
        let mut hits = 0;
        let mut trivial_nonempty = 0;
        for seed in 0..20 {
            let (suite, _) = run(&task, &engine(wbm, seed, 1000, solver), log);
            hits += usize::from(suite.found() && !suite.failed());
            let (suite, _) = run(&trivial, &engine(wbm, seed, 1000, solver), log);
            trivial_nonempty += usize::from(suite.found() || suite.failed());
        }
        ok &= hits == 20 && trivial_nonempty == 0;
        report.push(format!("{}: found {hits}/20, phi=true non-empty {trivial_nonempty}/20", wbm.as_str()));
    }
    check(ok, report.join("; "))
}

fn criterion_8(cfg: &SolverConfig) -> Outcome {
    let schema = DatasetSchema::new(
        vec![FeatureSpec::integer("p", 0, 9), FeatureSpec::categorical("q", &[3, 7])],
        vec![LabelSpec::boolean("lab")],
    )
    .unwrap();
    // p + q in {10, 12, 14} over this domain has five solutions.
    let mut script = SmtScript::new(&schema, 1);
    let sum = parse_all("(or (= (+ f_0_1 f_1_1) 10) (= (+ f_0_1 f_1_1) 12) (= (+ f_0_1 f_1_1) 14))").unwrap().remove(0);
    script.assert(Section::Property, sum);
    let mut expected = BTreeSet::new();
    for p in 0..=9i64 {
        for q in [3i64, 7] {
            if [10, 12, 14].contains(&(p + q)) {
                expected.insert(Instance::from_ints(&[p, q]));
            }
        }
    }
    if expected.len() != 5 {
        return Err(format!("fixture has {} solutions", expected.len()));
    }
    let mut blocks = Vec::new();
    let mut seen = Vec::new();
    loop {
        match solve(&script.with_blocks(&blocks), cfg).map_err(|e| e.to_string())? {
            SolveOutcome::Sat(a) => {
                if seen.len() > expected.len() {
                    return Err("solver keeps producing solutions".into());
                }
                seen.push(a.instances[0].clone());
                blocks.push(block_assignment(&a, &script));
            }
            SolveOutcome::Unsat => break,
            SolveOutcome::Unknown(why) => return Err(why),
        }
    }
    let distinct: BTreeSet<_> = seen.iter().cloned().collect();
    check(
        seen.len() == 5 && distinct == expected,
        format!("{} assignments ({} distinct, all solutions: {}), then UNSAT", seen.len(), distinct.len(), distinct == expected),
    )
}

fn criterion_9(solver: &SolverConfig, log: &mut Vec<(Task, TestSuite)>) -> Outcome {
    let task = planted_bounded();
    let rows = bounded_training_rows();
    let (lo, hi) = (int(2), int(7));
    let mut outside = 0;
    let mut total = 0;
    let mut seeds_found = 0;
    for seed in 0..20 {
        let cfg = EngineConfig {
            multi: true,
            bound_cex: true,
            bound_data: Some(rows.clone()),
            ..engine(SurrogateKind::Dt, seed, 40, solver)
        };
        let (suite, _) = run(&task, &cfg, log);
        if let Some(f) = failures(&suite) {
            return Err(format!("seed {seed} failed: {f}"));
        }
        seeds_found += usize::from(suite.found());
        for c in &suite.counterexamples {
            for x in &c.instances {
                total += 1;
                outside += usize::from(x.0[0] < lo || x.0[0] > hi);
            }
        }
    }
    check(
        outside == 0 && seeds_found > 0,
        format!("{total} suite instances over 20 seeds ({seeds_found} seeds non-empty), {outside} outside [2,7]"),
    )
}

fn criterion_10(solver: &SolverConfig) -> Outcome {
    let seeds: Vec<u64> = (0..20).collect();
    let unfair = EngineConfig { solver: solver.clone(), max_samples: 100, ..EngineConfig::default() };
    let trojan = EngineConfig { max_samples: 200, ..unfair.clone() };
    let mut table = bench(&[planted_unfairness()], &Tester::ALL, &seeds, &unfair, 10);
    table.cells.extend(bench(&[planted_trojan(true)], &Tester::ALL, &seeds, &trojan, 10).cells);
    println!("{}", table.to_markdown());
    let p = |task: &str, t: Tester| table.cell(task, t).map(|c| c.probability).unwrap_or(-1.0);
    let mut ok = table.cells.len() == 8;
    let mut report = Vec::new();
    for engine in [Tester::EngineDt, Tester::EngineNn] {
        for base in [Tester::Random, Tester::Art] {
            let (e, b) = (p("trojan", engine), p("trojan", base));
            ok &= e >= b;
            report.push(format!("{} {e:.2} vs {} {b:.2}", engine.as_str(), base.as_str()));
        }
    }
    check(ok, format!("8-cell table; trojan task: {}", report.join(", ")))
}

fn criterion_11(solver: &SolverConfig) -> Outcome {
    let task = planted_unfairness();
    let dir = std::env::temp_dir().join(format!("mlcheck-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut files = Vec::new();
    for (i, multi) in [false, false, true, true].into_iter().enumerate() {
        let cfg = EngineConfig { multi, ..engine(SurrogateKind::Dt, 7, if multi { 50 } else { 100 }, solver) };
        let suite = generate_test_suite(&mut task.mut_(), &task.spec, &task.schema, &cfg);
        let path = dir.join(format!("suite-{i}.jsonl"));
        std::fs::write(&path, suite.to_json_lines()).map_err(|e| e.to_string())?;
        files.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    let _ = std::fs::remove_dir_all(&dir);
    check(
        files[0] == files[1] && files[2] == files[3],
        format!("single-mode files {} bytes, multi-mode files {} bytes", files[0].len(), files[2].len()),
    )
}

fn main() {
    // Accept and ignore libtest arguments such as --nocapture.
    // Single NN queries can take tens of seconds; a generous timeout keeps
    // verdicts independent of machine load.
    let solver = SolverConfig::from_env().with_timeout(Duration::from_secs(300));
    if let Err(e) = solve_text("(check-sat)\n", &solver) {
        println!("acceptance: no SMT solver available ({e}); every criterion FAILS");
        std::process::exit(1);
    }
    let mut log = Vec::new();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut record = |n: usize, name: &'static str, outcome: Outcome| {
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("criterion {n:>2} {tag}  {name}: {detail}");
        results.push((n, name, outcome));
    };
    record(1, "decision tree encoding equivalence", criterion_1(&solver));
    record(2, "neural network encoding equivalence", criterion_2(&solver));
    record(3, "fairness translation fixture", criterion_3());
    record(4, "planted unfairness", criterion_4(&solver, &mut log));
    let constant = criterion_5_runs(&solver, &mut log);
    record(6, "planted trojan", criterion_6(&solver, &mut log));
    record(7, "concept relationship", criterion_7(&solver, &mut log));
    record(8, "augmentation by blocking", criterion_8(&solver));
    record(9, "bounded counterexamples", criterion_9(&solver, &mut log));
    let mut revalidation_failures = 0;
    let mut entries = 0;
    for (task, suite) in &log {
        entries += suite.counterexamples.len();
        revalidation_failures += revalidate(&mut task.mut_(), &task.spec, suite).unwrap_or(usize::MAX / 2);
    }
    let outcome5 = match constant {
        Ok(nonempty) => check(
            nonempty == 0 && revalidation_failures == 0,
            format!(
                "constant model: {nonempty}/40 non-empty suites; revalidated {entries} entries from {} runs, {revalidation_failures} failures",
                log.len()
            ),
        ),
        Err(e) => Err(e),
    };
    record(5, "soundness", outcome5);
    record(10, "baseline comparison", criterion_10(&solver));
    record(11, "determinism", criterion_11(&solver));
    results.sort_by_key(|r| r.0);
    let failed: Vec<usize> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0).collect();
    println!("acceptance: {}/{} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
