//! Command-line front end: reads a [`RunConfig`], runs one subcommand, and
//! returns a JSON report plus CSV artifacts.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for numerical failure.

pub mod commands;
pub mod config;
pub mod csv_out;

use std::fmt;
use std::path::PathBuf;

use serde::Serialize;
use serde_json::Value;

pub use commands::{execute, Command, Output};
pub use config::RunConfig;

/// Failure with a stable category tag and the process exit code.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CliError {
    pub category: String,
    pub message: String,
    #[serde(skip)]
    pub exit_code: i32,
}

impl CliError {
    pub fn new(category: &str, message: String, exit_code: i32) -> Self {
        CliError {
            category: category.to_string(),
            message,
            exit_code,
        }
    }

    pub fn config(message: String) -> Self {
        Self::new("config/invalid", message, 2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("errors serialize")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.category, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fkdegen::Error> for CliError {
    fn from(e: fkdegen::Error) -> Self {
        let code = if e.is_numerical() { 3 } else { 2 };
        CliError::new(e.category(), e.to_string(), code)
    }
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Flags {
    pub config: PathBuf,
    pub overrides: Vec<String>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub dump_paths: Option<usize>,
}

/// Worker cap: the flag, then `FKDEGEN_THREADS`, then the config.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>) -> Result<Option<usize>, CliError> {
    if flag.is_some() {
        return Ok(flag);
    }
    match env {
        Some(s) if !s.trim().is_empty() => s
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::config(format!("FKDEGEN_THREADS=`{s}` is not a positive integer"))),
        _ => Ok(None),
    }
}

/// Load, patch, run, and write artifacts. Returns the JSON report.
pub fn run(command: Command, flags: &Flags) -> Result<Value, CliError> {
    let mut cfg = RunConfig::load(&flags.config, &flags.overrides)?;
    let env = std::env::var("FKDEGEN_THREADS").ok();
    if let Some(n) = resolve_threads(flags.threads, env.as_deref())? {
        cfg.sim.threads = Some(n);
    }
    if let Some(d) = &flags.out_dir {
        cfg.output.dir = Some(d.display().to_string());
    }
    if let Some(n) = flags.dump_paths {
        cfg.output.dump_paths = n;
    }
    if cfg.output.dump_paths > 0 && cfg.output.dir.is_none() {
        return Err(CliError::config("--dump-paths needs --out-dir or output.dir".into()));
    }
    let out = execute(command, &cfg)?;
    // CSV artifacts are only written when a directory is configured
    if let Some(dir) = &cfg.output.dir {
        let dir = PathBuf::from(dir);
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::new("output/io", format!("cannot create {}: {e}", dir.display()), 2))?;
        for a in &out.artifacts {
            a.write(&dir.join(&a.name))?;
        }
    }
    Ok(out.report)
}
