//! Command-line driver: configuration, orchestration and output.

pub mod commands;
pub mod config;
pub mod emit;

use std::path::{Path, PathBuf};

use clap::Parser;
use sha2::{Digest, Sha256};

pub use commands::execute;
pub use config::{parse_config, parse_config_str, resolve, Command, RunConfig};
pub use emit::Emission;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Compute(#[from] degensolve_core::Error),
    #[error("emission error: {0}")]
    Emission(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Compute(_) => 3,
            Self::Emission(_) => 4,
        }
    }
}

/// Environment variable overriding `--threads`.
pub const THREADS_ENV: &str = "DEGENSOLVE_THREADS";

#[derive(Debug, Clone, Parser)]
#[command(name = "degensolve", version, about = "Solver and structural checks for degenerate quasilinear elliptic problems")]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Run configuration (TOML, or JSON with a `.json` extension).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "degensolve-out")]
    pub out: PathBuf,
    /// Seed for randomized data; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (overridden by DEGENSOLVE_THREADS).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Result of a finished command.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub passed: bool,
    pub lines: Vec<String>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

fn thread_count(cli: &Cli) -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Config(format!("{THREADS_ENV}: expected a positive integer, got `{v}`"))),
        Err(_) => match cli.threads {
            Some(0) => Err(CliError::Config("--threads: must be positive".into())),
            t => Ok(t),
        },
    }
}

/// Runs a parsed command line. Validation happens before any output is
/// written.
pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if cli.command == Command::Report {
        return report(&cli.out);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config: required".into()))?;
    let config = parse_config(path)?;
    let resolved = resolve(config, Some(cli.command), cli.seed)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(cli)? {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let emission = pool.install(|| execute(&resolved))?;
    emission.write(&cli.out)?;
    Ok(summarize(&emission))
}

fn summarize(e: &Emission) -> Outcome {
    let mut lines: Vec<String> = e
        .checks
        .iter()
        .map(|(name, c)| format!("{} {name} ({:?})", if c.holds { "PASS" } else { "FAIL" }, c.value))
        .collect();
    lines.push(format!("{}: {}", e.command, if e.passed() { "all checks hold" } else { "some checks failed" }));
    Outcome {
        passed: e.passed(),
        lines,
    }
}

/// Re-reads a finished run, verifies file digests and summarizes it.
pub fn report(out: &Path) -> Result<Outcome, CliError> {
    let text = std::fs::read_to_string(out.join("manifest.json"))
        .map_err(|e| CliError::Config(format!("--out: cannot read manifest: {e}")))?;
    let manifest: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest.json: {e}")))?;
    let mut lines = Vec::new();
    let mut passed = manifest["passed"].as_bool().unwrap_or(false);
    if let Some(files) = manifest["files"].as_object() {
        for (name, digest) in files {
            let ok = std::fs::read(out.join(name))
                .map(|b| hex::encode(Sha256::digest(&b)) == digest.as_str().unwrap_or(""))
                .unwrap_or(false);
            if !ok {
                passed = false;
                lines.push(format!("FAIL digest {name}"));
            }
        }
    }
    if let Some(checks) = manifest["checks"].as_object() {
        for (name, c) in checks {
            let holds = c["holds"].as_bool().unwrap_or(false);
            lines.push(format!("{} {name} ({})", if holds { "PASS" } else { "FAIL" }, c["value"]));
        }
    }
    lines.push(format!(
        "{}: {}",
        manifest["command"].as_str().unwrap_or("?"),
        if passed { "all checks hold" } else { "some checks failed" }
    ));
    Ok(Outcome { passed, lines })
}
