use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Deserialize;

use mlcheck_core::harness::{
    constant_fairness, planted_concept, planted_trojan, planted_unfairness, run_tester, summarize, RunRecord, Task,
};
use mlcheck_core::{BenchTable, DatasetSchema, PropertySpec, Tester};

use crate::load::{self, usage, MutSource};
use crate::{failure_exit, CommonArgs, EXIT_OK};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Markdown,
    Csv,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// TOML manifest listing seeds, testers and tasks.
    manifest: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
    /// Write the table here instead of standard output.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
struct Manifest {
    /// A list of seeds, or a count meaning 0..count.
    #[serde(default)]
    seeds: Option<Seeds>,
    #[serde(default)]
    max_samples: Option<usize>,
    #[serde(default)]
    multi: bool,
    #[serde(default)]
    testers: Option<Vec<String>>,
    #[serde(default, rename = "task")]
    tasks: Vec<TaskEntry>,
}

#[derive(Deserialize, Debug)]
#[serde(untagged)]
enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
struct TaskEntry {
    name: Option<String>,
    /// `unfairness`, `constant`, `trojan`, `trojan-clean` or `concept`.
    planted: Option<String>,
    /// Concept formula for `planted = "concept"`.
    formula: Option<String>,
    schema: Option<String>,
    property: Option<String>,
    #[serde(rename = "mut")]
    model: Option<String>,
}

struct BenchTask {
    name: String,
    schema: DatasetSchema,
    spec: PropertySpec,
    source: MutSource,
}

impl From<Task> for BenchTask {
    fn from(t: Task) -> Self {
        BenchTask { name: t.name, schema: t.schema, spec: t.spec, source: MutSource::Builtin(t.model) }
    }
}

fn planted(name: &str, formula: Option<&str>) -> Result<Task> {
    Ok(match name {
        "unfairness" => planted_unfairness(),
        "constant" => constant_fairness(),
        "trojan" => planted_trojan(true),
        "trojan-clean" => planted_trojan(false),
        "concept" => planted_concept(formula.unwrap_or("dog => animal")),
        other => return Err(usage(format!("unknown planted task `{other}`"))),
    })
}

fn load_task(entry: &TaskEntry, base: &Path, index: usize) -> Result<BenchTask> {
    let context = || format!("task {}", index + 1);
    if let Some(kind) = &entry.planted {
        if entry.schema.is_some() || entry.property.is_some() || entry.model.is_some() {
            return Err(usage(format!("{}: `planted` excludes schema, property and mut", context())));
        }
        let mut task: BenchTask = planted(kind, entry.formula.as_deref())?.into();
        if let Some(name) = &entry.name {
            task.name = name.clone();
        }
        return Ok(task);
    }
    let (Some(schema), Some(property), Some(model)) = (&entry.schema, &entry.property, &entry.model) else {
        return Err(usage(format!("{}: needs either `planted` or all of schema, property and mut", context())));
    };
    let schema = load::load_schema(&load::resolve(base, schema))?;
    let spec = load::load_property(&schema, property, base)?;
    let source = MutSource::parse(&schema, model, base)?;
    let name = entry.name.clone().unwrap_or_else(|| spec.id.clone());
    Ok(BenchTask { name, schema, spec, source })
}

pub fn bench(args: BenchArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.manifest)
        .map_err(|e| usage(format!("cannot read {}: {e}", args.manifest.display())))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", args.manifest.display())))?;
    if manifest.tasks.is_empty() {
        return Err(usage(format!("{}: manifest lists no tasks", args.manifest.display())));
    }
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let tasks = manifest
        .tasks
        .iter()
        .enumerate()
        .map(|(i, e)| load_task(e, base, i))
        .collect::<Result<Vec<_>>>()?;
    let testers = match &manifest.testers {
        Some(names) if names.is_empty() => return Err(usage("manifest lists no testers")),
        Some(names) => names.iter().map(|n| n.parse::<Tester>().map_err(usage)).collect::<Result<Vec<_>>>()?,
        None => Tester::ALL.to_vec(),
    };
    let seeds: Vec<u64> = match manifest.seeds {
        None => (0..20).collect(),
        Some(Seeds::Count(n)) => (0..n).collect(),
        Some(Seeds::List(list)) => list,
    };
    if seeds.is_empty() {
        return Err(usage("manifest lists no seeds"));
    }

    let mut cfg = args.common.engine_config()?;
    cfg.multi = manifest.multi;
    if let Some(m) = manifest.max_samples {
        cfg.max_samples = m;
    }
    cfg.validate().map_err(usage)?;

    // Cells run one after another; every run owns its model and solver processes.
    let mut table = BenchTable::default();
    let mut worst_failure = EXIT_OK;
    for task in &tasks {
        for &tester in &testers {
            let mut runs = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let mut mut_ = task.source.instantiate(&task.schema)?;
                let suite = run_tester(&mut mut_, &task.spec, &task.schema, tester, seed, &cfg, args.common.art_pool);
                if let Some(f) = &suite.stats.failure {
                    eprintln!("error: {} / {} / seed {seed}: {}", task.name, tester.as_str(), f.message);
                    worst_failure = worst_failure.max(failure_exit(f.kind));
                }
                runs.push(RunRecord::from_suite(&task.name, tester, seed, &suite));
            }
            table.cells.push(summarize(&task.name, tester, &runs));
        }
    }

    let rendered = match args.format {
        Format::Markdown => table.to_markdown(),
        Format::Csv => table.to_csv(),
    };
    match &args.out {
        Some(path) => std::fs::write(path, rendered).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{rendered}"),
    }
    Ok(worst_failure)
}
