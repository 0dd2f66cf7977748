//! `mlcheck`: generate counterexamples to properties of black-box classifiers.

mod bench;
mod load;
mod run;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use mlcheck_core::smt::SolverConfig;
use mlcheck_core::surrogate::{MlpParams, TreeParams};
use mlcheck_core::{EngineConfig, FailureKind, TrainParams};

use load::UsageError;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FOUND: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_FAILURE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mlcheck", version, about = "Property-driven test generation for black-box classifiers")]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Test one model against one property.
    Run(run::RunArgs),
    /// Compare testers over the tasks listed in a TOML manifest.
    Bench(bench::BenchArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum WbmArg {
    Dt,
    Nn,
}

/// Settings shared by `run` and `bench`.
#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML file whose keys supply flags; explicit flags take precedence.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Solver command reading SMT-LIB on stdin [default: $MLCHECK_SOLVER or `z3 -in`].
    #[arg(long, value_name = "CMD")]
    solver: Option<String>,
    /// Per-query solver timeout in seconds.
    #[arg(long, default_value_t = 60.0, value_name = "SECS")]
    solver_timeout: f64,
    /// Write every solver script into this directory.
    #[arg(long, value_name = "DIR")]
    dump_smt: Option<PathBuf>,
    /// Rows labelled by the model before the first surrogate is trained.
    #[arg(long, default_value_t = 200)]
    initial_train_size: usize,
    /// Rejected candidates collected before retraining.
    #[arg(long, default_value_t = 5)]
    retrain_trigger: usize,
    /// Hidden layer widths of the network surrogate.
    #[arg(long, value_delimiter = ',', default_value = "10,10")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// Depth limit of the tree surrogate.
    #[arg(long, default_value_t = 8)]
    max_depth: usize,
    /// Candidates drawn per adaptive random testing step.
    #[arg(long, default_value_t = 10)]
    art_pool: usize,
}

impl CommonArgs {
    pub fn engine_config(&self) -> Result<EngineConfig> {
        if !(self.solver_timeout.is_finite() && self.solver_timeout > 0.0) {
            return Err(load::usage("--solver-timeout must be a positive number of seconds"));
        }
        if self.art_pool == 0 {
            return Err(load::usage("--art-pool must be positive"));
        }
        let mut solver = match &self.solver {
            Some(cmd) => SolverConfig::new(cmd.clone()),
            None => SolverConfig::from_env(),
        }
        .with_timeout(Duration::from_secs_f64(self.solver_timeout));
        if let Some(dir) = &self.dump_smt {
            solver = solver.with_dump_dir(dir);
        }
        let train = TrainParams {
            tree: TreeParams { max_depth: self.max_depth, ..TreeParams::default() },
            mlp: MlpParams { hidden: self.hidden.clone(), epochs: self.epochs, ..MlpParams::default() },
        };
        let cfg = EngineConfig {
            initial_train_size: self.initial_train_size,
            retrain_trigger: self.retrain_trigger,
            solver,
            train,
            ..EngineConfig::default()
        };
        Ok(cfg)
    }
}

pub fn failure_exit(kind: FailureKind) -> u8 {
    match kind {
        FailureKind::Config | FailureKind::Sampling => EXIT_USAGE,
        FailureKind::Oracle | FailureKind::Solver | FailureKind::Surrogate => EXIT_FAILURE,
    }
}

/// Splices `--config` files into the argument list right after the
/// subcommand, so that flags given on the command line override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut out: Vec<OsString> = Vec::with_capacity(args.len());
    let mut configs = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let text = arg.to_string_lossy();
        if text == "--config" {
            match iter.next() {
                Some(path) => configs.push(PathBuf::from(path)),
                None => return Err(load::usage("--config needs a file")),
            }
        } else if let Some(path) = text.strip_prefix("--config=") {
            configs.push(PathBuf::from(path));
        } else {
            out.push(arg);
        }
    }
    if configs.is_empty() || out.len() < 2 {
        return Ok(out);
    }
    let mut extra = Vec::new();
    for path in configs {
        extra.extend(load::config_args(&path)?.into_iter().map(OsString::from));
    }
    out.splice(2..2, extra);
    Ok(out)
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        EXIT_USAGE
    } else {
        EXIT_FAILURE
    }
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args_os().collect()) {
        Ok(args) => args,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let result = match cli.command {
        Command::Run(args) => run::run(args),
        Command::Bench(args) => bench::bench(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
