//! Subcommand implementations behind the `scaleadapt` binary.

pub mod args;
pub mod commands;
pub mod record;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

pub use args::{Cli, Command};

/// Usage errors exit with status 2, everything else with 1.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<scaleadapt_core::Error> for CliError {
    fn from(e: scaleadapt_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(e: impl fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Reads a `--config` file.
pub fn load_config(path: &Path) -> CliResult<toml::Table> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
}

/// Returns `args` with every key of `overrides` replacing the matching field.
/// Keys may use `-` or `_`; unknown keys are rejected.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(args: &T, overrides: &toml::Table) -> CliResult<T> {
    let mut value = serde_json::to_value(args).map_err(|e| CliError::Runtime(e.into()))?;
    let fields = value.as_object_mut().expect("argument structs serialize to objects");
    for (key, v) in overrides {
        let name = key.replace('-', "_");
        if !fields.contains_key(&name) {
            return Err(usage(format!("config: unknown option '{key}'")));
        }
        let v = serde_json::to_value(v).map_err(|e| usage(format!("config: '{key}': {e}")))?;
        fields.insert(name, v);
    }
    serde_json::from_value(value).map_err(|e| usage(format!("config: {e}")))
}

fn overridden<T: Serialize + DeserializeOwned>(args: &T, config: Option<&toml::Table>, section: &str) -> CliResult<T> {
    match config.and_then(|c| c.get(section)) {
        None => apply_overrides(args, &toml::Table::new()),
        Some(toml::Value::Table(t)) => apply_overrides(args, t),
        Some(_) => Err(usage(format!("config: '{section}' must be a table"))),
    }
}

fn init_workers(cli_workers: Option<usize>, config: Option<&toml::Table>) -> CliResult<()> {
    let from_config = match config.and_then(|c| c.get("workers")) {
        None => None,
        Some(toml::Value::Integer(n)) if *n >= 1 => Some(*n as usize),
        Some(_) => return Err(usage("config: 'workers' must be a positive integer")),
    };
    let Some(n) = from_config.or(cli_workers) else {
        return Ok(());
    };
    if n == 0 {
        return Err(usage("--workers must be >= 1"));
    }
    // a second initialisation in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref().map(load_config).transpose()?;
    let config = config.as_ref();
    init_workers(cli.workers, config)?;
    let section = cli.command.name();
    match &cli.command {
        Command::Simulate(a) => commands::simulate(&overridden(a, config, section)?),
        Command::ScaleSearch(a) => commands::scale_search(&overridden(a, config, section)?),
        Command::PseudoLabel(a) => commands::pseudo_label(&overridden(a, config, section)?),
        Command::AdaptEval(a) => commands::adapt_eval_cmd(&overridden(a, config, section)?),
        Command::Eval(a) => commands::eval_cmd(&overridden(a, config, section)?),
        Command::Report(a) => commands::report(&overridden(a, config, section)?),
    }
}
