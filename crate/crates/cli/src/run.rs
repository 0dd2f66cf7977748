use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};

use mlcheck_core::harness::{run_tester, summarize, RunRecord};
use mlcheck_core::rational::parse_rational;
use mlcheck_core::{BenchTable, DatasetSchema, Instance, SurrogateKind, Tester};

use crate::load::{self, usage, MutSource};
use crate::{failure_exit, CommonArgs, WbmArg, EXIT_FOUND, EXIT_OK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TesterArg {
    /// Surrogate-guided search (see --wbm).
    Engine,
    Random,
    Art,
}

#[derive(Args, Debug)]
pub struct RunArgs {
    /// XML description of the features and labels.
    #[arg(long, value_name = "FILE")]
    schema: PathBuf,
    /// `fairness:s=<feature>`, `concept:<formula>`, `trojan:<file>` or a property file.
    #[arg(long, value_name = "REF")]
    property: String,
    /// `builtin:<model.json>` or `external:<command>`.
    #[arg(long = "mut", value_name = "REF")]
    model: String,
    #[arg(long, value_enum, default_value_t = TesterArg::Engine)]
    tester: TesterArg,
    /// White-box surrogate used by the engine.
    #[arg(long, value_enum, default_value_t = WbmArg::Dt)]
    wbm: WbmArg,
    /// Collect counterexamples until the budget is spent.
    #[arg(long)]
    multi: bool,
    /// Budget of model queries spent on candidates.
    #[arg(long, default_value_t = 1000)]
    max_samples: usize,
    /// Keep counterexamples inside the feature ranges of the training data.
    #[arg(long)]
    bound_cex: bool,
    /// CSV of feature rows whose ranges bound counterexamples (with --bound-cex).
    #[arg(long, value_name = "FILE", requires = "bound_cex")]
    bound_data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run with seeds seed, seed+1, ... and report aggregates.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    /// Suite JSON-lines file; a `.seed<N>` suffix is added when repeating.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Aggregate CSV report.
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
    /// Exit with status 1 when a counterexample is found.
    #[arg(long)]
    fail_on_cex: bool,
    #[command(flatten)]
    common: CommonArgs,
}

impl RunArgs {
    fn tester(&self) -> Tester {
        match (self.tester, self.wbm) {
            (TesterArg::Engine, WbmArg::Dt) => Tester::EngineDt,
            (TesterArg::Engine, WbmArg::Nn) => Tester::EngineNn,
            (TesterArg::Random, _) => Tester::Random,
            (TesterArg::Art, _) => Tester::Art,
        }
    }
}

fn read_bound_data(path: &Path, schema: &DatasetSchema) -> Result<Vec<Instance>> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Option<Vec<_>> = line.split(',').map(|v| parse_rational(v.trim())).collect();
        let Some(values) = values else {
            // A leading header row is allowed.
            if rows.is_empty() && n == 0 {
                continue;
            }
            return Err(usage(format!("{}:{}: not a row of numbers", path.display(), n + 1)));
        };
        let x = Instance(values);
        schema
            .validate_instance(&x)
            .map_err(|v| usage(format!("{}:{}: {}", path.display(), n + 1, v[0])))?;
        rows.push(x);
    }
    if rows.is_empty() {
        return Err(usage(format!("{}: no rows", path.display())));
    }
    Ok(rows)
}

fn suite_path(out: &Path, seed: u64, repeat: usize) -> PathBuf {
    if repeat <= 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.seed{seed}.{}", ext.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    out.with_file_name(name)
}

pub fn run(args: RunArgs) -> Result<u8> {
    if args.repeat == 0 {
        return Err(usage("--repeat must be positive"));
    }
    let cwd = Path::new(".");
    let schema = load::load_schema(&args.schema)?;
    let spec = load::load_property(&schema, &args.property, cwd)?;
    let source = MutSource::parse(&schema, &args.model, cwd)?;
    let mut cfg = args.common.engine_config()?;
    cfg.wbm = if args.wbm == WbmArg::Nn { SurrogateKind::Nn } else { SurrogateKind::Dt };
    cfg.multi = args.multi;
    cfg.max_samples = args.max_samples;
    cfg.bound_cex = args.bound_cex;
    if let Some(path) = &args.bound_data {
        cfg.bound_data = Some(read_bound_data(path, &schema)?);
    }
    cfg.validate().map_err(usage)?;

    let tester = args.tester();
    let mut records = Vec::new();
    let mut worst_failure = EXIT_OK;
    for seed in (0..args.repeat as u64).map(|i| args.seed.wrapping_add(i)) {
        let mut mut_ = source.instantiate(&schema)?;
        let suite = run_tester(&mut mut_, &spec, &schema, tester, seed, &cfg, args.common.art_pool);
        if let Some(out) = &args.out {
            let path = suite_path(out, seed, args.repeat);
            std::fs::write(&path, suite.to_json_lines()).with_context(|| format!("writing {}", path.display()))?;
        }
        if args.repeat == 1 {
            print!("{}", suite.summary());
        } else {
            let failure = suite.stats.failure.as_ref().map(|f| format!(" FAILURE: {}", f.message)).unwrap_or_default();
            println!(
                "seed {seed}: found {} in {} queries ({}){failure}",
                suite.counterexamples.len(),
                suite.stats.queries,
                suite.stats.stop_reason
            );
        }
        if let Some(f) = &suite.stats.failure {
            eprintln!("error: seed {seed}: {}", f.message);
            worst_failure = worst_failure.max(failure_exit(f.kind));
        }
        records.push(RunRecord::from_suite(&spec.id, tester, seed, &suite));
    }

    let table = BenchTable { cells: vec![summarize(&spec.id, tester, &records)] };
    if args.repeat > 1 {
        let c = &table.cells[0];
        println!();
        println!("runs         {} ({} failed)", c.runs, c.failures);
        println!("probability  {:.2}", c.probability);
        println!("found        {:.2} ± {:.2}", c.mean_found, c.sem_found);
        println!("queries      {:.2} ± {:.2}", c.mean_queries, c.sem_queries);
    }
    if let Some(path) = &args.report {
        std::fs::write(path, table.to_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if worst_failure != EXIT_OK {
        return Ok(worst_failure);
    }
    if args.fail_on_cex && records.iter().any(|r| r.found) {
        return Ok(EXIT_FOUND);
    }
    Ok(EXIT_OK)
}
