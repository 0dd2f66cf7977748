use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use num_traits::ToPrimitive;
use wait_timeout::ChildExt;

use super::sexpr::{and, atom, eq, eval_number, int_lit, not, parse_all, real_lit, SExpr};
use super::{SmtError, SmtScript, Sort, VarNames};
use crate::rational::Rational;
use crate::schema::{Instance, Prediction};

/// Environment variable overriding the solver command.
pub const SOLVER_ENV: &str = "MLCHECK_SOLVER";

#[derive(Clone, Debug)]
pub struct SolverConfig {
    /// Shell command reading SMT-LIB from standard input.
    pub command: String,
    pub timeout: Duration,
    /// Every emitted script is written here when set.
    pub dump_dir: Option<PathBuf>,
    dump_counter: Arc<AtomicUsize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::new("z3 -in")
    }
}

impl SolverConfig {
    pub fn new(command: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            timeout: Duration::from_secs(60),
            dump_dir: None,
            dump_counter: Arc::new(AtomicUsize::new(0)),
        }
    }

    /// Default configuration, honouring the solver override variable.
    pub fn from_env() -> Self {
        match std::env::var(SOLVER_ENV) {
            Ok(cmd) if !cmd.trim().is_empty() => Self::new(cmd),
            _ => Self::default(),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_dump_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.dump_dir = Some(dir.into());
        self
    }

    fn dump(&self, text: &str) -> Result<(), SmtError> {
        let Some(dir) = &self.dump_dir else { return Ok(()) };
        std::fs::create_dir_all(dir).map_err(|e| SmtError::Dump(format!("{}: {e}", dir.display())))?;
        let n = self.dump_counter.fetch_add(1, Ordering::SeqCst);
        let path = dir.join(format!("query-{n:05}.smt2"));
        std::fs::write(&path, text).map_err(|e| SmtError::Dump(format!("{}: {e}", path.display())))
    }
}

/// Satisfying assignment restricted to the features and classes of every copy.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub instances: Vec<Instance>,
    pub classes: Vec<Prediction>,
    /// Every numeric value reported by the solver.
    pub values: BTreeMap<String, Rational>,
    pub raw: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolveOutcome {
    Sat(Assignment),
    Unsat,
    Unknown(String),
}

/// Result of running an arbitrary script.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RawOutcome {
    Sat(BTreeMap<String, Rational>),
    Unsat,
    Unknown(String),
}

fn run(text: &str, cfg: &SolverConfig) -> Result<Option<String>, SmtError> {
    cfg.dump(text)?;
    let mut child = Command::new("sh")
        .arg("-c")
        .arg(&cfg.command)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SmtError::Spawn { command: cfg.command.clone(), message: e.to_string() })?;
    let mut stdin = child.stdin.take().expect("piped stdin");
    let input = text.to_string();
    let writer = thread::spawn(move || {
        let _ = stdin.write_all(input.as_bytes());
    });
    let mut stdout = child.stdout.take().expect("piped stdout");
    let reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stdout.read_to_string(&mut s);
        s
    });
    let mut stderr = child.stderr.take().expect("piped stderr");
    let err_reader = thread::spawn(move || {
        let mut s = String::new();
        let _ = stderr.read_to_string(&mut s);
        s
    });
    let status = child.wait_timeout(cfg.timeout).map_err(|e| SmtError::Crashed {
        message: e.to_string(),
        output: String::new(),
    })?;
    let Some(status) = status else {
        let _ = child.kill();
        let _ = child.wait();
        let _ = writer.join();
        let _ = reader.join();
        let _ = err_reader.join();
        return Ok(None);
    };
    let _ = writer.join();
    let out = reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if status.code() == Some(127) {
        return Err(SmtError::NotFound { command: cfg.command.clone() });
    }
    if out.trim().is_empty() {
        return Err(SmtError::Crashed { message: format!("no output ({status})"), output: err });
    }
    Ok(Some(out))
}

fn error_message(e: &SExpr) -> Option<String> {
    match e {
        SExpr::List(items) if items.first() == Some(&atom("error")) => {
            Some(items.get(1).map(|m| m.to_string()).unwrap_or_default())
        }
        _ => None,
    }
}

/// Runs `text` (which must end in `(check-sat)` and optionally a
/// `(get-value ...)`) and parses the outcome.
pub fn solve_text(text: &str, cfg: &SolverConfig) -> Result<RawOutcome, SmtError> {
    let Some(out) = run(text, cfg)? else {
        return Ok(RawOutcome::Unknown(format!("timeout after {} ms", cfg.timeout.as_millis())));
    };
    let parse_err = |message: String| SmtError::Parse { message, output: out.clone() };
    let items = parse_all(&out).map_err(parse_err)?;
    let mut iter = items.iter();
    let status = loop {
        match iter.next() {
            Some(SExpr::Atom(a)) if a == "sat" || a == "unsat" || a == "unknown" => break a.as_str(),
            Some(e) => {
                let message = error_message(e).unwrap_or_else(|| format!("unexpected `{e}`"));
                return Err(SmtError::Script { message, output: out.clone() });
            }
            None => return Err(parse_err("no check-sat result".into())),
        }
    };
    match status {
        "unsat" => Ok(RawOutcome::Unsat),
        "unknown" => Ok(RawOutcome::Unknown("solver returned unknown".into())),
        _ => {
            let mut values = BTreeMap::new();
            if let Some(model) = iter.next() {
                if let Some(message) = error_message(model) {
                    return Err(parse_err(format!("get-value failed: {message}")));
                }
                let SExpr::List(pairs) = model else {
                    return Err(parse_err(format!("expected a value list, got `{model}`")));
                };
                for pair in pairs {
                    let SExpr::List(kv) = pair else { return Err(parse_err(format!("bad value entry `{pair}`"))) };
                    let [SExpr::Atom(name), value] = kv.as_slice() else {
                        return Err(parse_err(format!("bad value entry `{pair}`")));
                    };
                    if matches!(value, SExpr::Atom(v) if v == "true" || v == "false") {
                        continue;
                    }
                    let v = eval_number(value).ok_or_else(|| parse_err(format!("cannot read value `{value}`")))?;
                    values.insert(name.clone(), v);
                }
            }
            Ok(RawOutcome::Sat(values))
        }
    }
}

/// Solves a generated script and reads back one instance and prediction per copy.
pub fn solve(script: &SmtScript, cfg: &SolverConfig) -> Result<SolveOutcome, SmtError> {
    let text = script.text();
    let values = match solve_text(&text, cfg)? {
        RawOutcome::Sat(values) => values,
        RawOutcome::Unsat => return Ok(SolveOutcome::Unsat),
        RawOutcome::Unknown(why) => return Ok(SolveOutcome::Unknown(why)),
    };
    let raw: String = values.iter().map(|(k, v)| format!("{k}={}\n", crate::rational::format_rational(v))).collect();
    let missing = |name: &str| SmtError::Parse { message: format!("no value for `{name}`"), output: raw.clone() };
    let mut instances = Vec::with_capacity(script.copies);
    let mut classes = Vec::with_capacity(script.copies);
    for c in 1..=script.copies {
        let mut x = Vec::with_capacity(script.feature_sorts.len());
        for (i, sort) in script.feature_sorts.iter().enumerate() {
            let name = VarNames::feature(i, c);
            let v = values.get(&name).ok_or_else(|| missing(&name))?;
            if *sort == Sort::Int && !v.is_integer() {
                return Err(SmtError::Parse { message: format!("`{name}` is not integral"), output: raw.clone() });
            }
            x.push(v.clone());
        }
        let mut z = Vec::with_capacity(script.labels);
        for l in 0..script.labels {
            let name = VarNames::class(l, c);
            let v = values.get(&name).ok_or_else(|| missing(&name))?;
            let code = v.is_integer().then(|| v.to_integer().to_i64()).flatten();
            z.push(code.ok_or_else(|| SmtError::Parse { message: format!("`{name}` is not a class code"), output: raw.clone() })?);
        }
        instances.push(Instance(x));
        classes.push(Prediction(z));
    }
    Ok(SolveOutcome::Sat(Assignment { instances, classes, values, raw }))
}

/// `¬(⋀ f_i_c = v)` over every feature of every copy.
pub fn block_assignment(a: &Assignment, script: &SmtScript) -> SExpr {
    let mut parts = Vec::new();
    for (c, x) in a.instances.iter().enumerate() {
        for (i, v) in x.0.iter().enumerate() {
            let value = match script.feature_sorts[i] {
                Sort::Int => int_lit(&v.to_integer()),
                _ => real_lit(v),
            };
            parts.push(eq(atom(VarNames::feature(i, c + 1)), value));
        }
    }
    not(and(parts))
}
