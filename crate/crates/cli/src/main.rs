mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use mpnet::numfmt;

#[derive(Debug, Parser)]
#[command(
    name = "mpnet",
    version,
    about = "Measure-preserving coupling networks and flow compilation"
)]
struct Cli {
    /// JSON run configuration; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Integrate a field and write pair dataset and trajectory CSVs.
    GenData,
    /// Train a coupling net on a pair dataset.
    Train,
    /// Roll out a saved model.
    Predict,
    /// Compile a divergence-free field into a net of shear layers.
    Compile,
    /// Split a divergence-free field into two-coordinate pairs.
    Decompose,
    /// Measure how the compiled-flow error scales with the step size.
    Convergence,
    /// Check invertibility, unit determinant and optionally L^p distance of a model.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Compile => "compile",
            Command::Decompose => "decompose",
            Command::Convergence => "convergence",
            Command::Verify => "verify",
        }
    }
}

/// A failed run: exit code, message and whatever measurements were made.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
    pub metrics: Map<String, Value>,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
            metrics: Map::new(),
        }
    }
}

impl From<mpnet::Error> for Failure {
    fn from(e: mpnet::Error) -> Self {
        use mpnet::Error as E;
        let code = match &e {
            E::Config(_) | E::Parse { .. } | E::Dimension { .. } | E::Io(_) | E::Csv(_) => 2,
            E::Unsupported(_) | E::UnsupportedGradient(_) => 4,
            E::Numeric(_)
            | E::BlowUp { .. }
            | E::NonFiniteGradient { .. }
            | E::TrainingAborted { .. }
            | E::NotDivergenceFree { .. }
            | E::Decomposition { .. } => 3,
        };
        let mut metrics = Map::new();
        match &e {
            E::NotDivergenceFree { point, divergence } => {
                metrics.insert("worst_point".into(), json!(point));
                metrics.insert("divergence".into(), json!(divergence));
            }
            E::Decomposition {
                point, residual, ..
            } => {
                metrics.insert("worst_point".into(), json!(point));
                metrics.insert("residual".into(), json!(residual));
            }
            E::BlowUp { step } => {
                metrics.insert("step".into(), json!(step));
            }
            E::TrainingAborted { epoch, .. } => {
                metrics.insert("aborted_epoch".into(), json!(epoch));
            }
            _ => {}
        }
        Self {
            code,
            message: e.to_string(),
            metrics,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::config(format!("i/o error: {e}"))
    }
}

fn status_name(code: u8) -> &'static str {
    match code {
        0 => "ok",
        2 => "config_error",
        3 => "numeric_error",
        4 => "unsupported",
        5 => "verification_failed",
        _ => "error",
    }
}

/// Everything a command needs besides its parsed configuration.
pub struct Run<'a> {
    pub seed: Option<u64>,
    pub out: &'a Path,
}

impl Run<'_> {
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        std::fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// Parsed configuration (as JSON) and the outcome of running it.
type Outcome = (Option<Value>, Result<Map<String, Value>, Failure>);

fn dispatch(command: Command, raw: Option<&[u8]>, run: &Run) -> Outcome {
    match command {
        Command::GenData => commands::execute(raw, run, commands::gen_data),
        Command::Train => commands::execute(raw, run, commands::train),
        Command::Predict => commands::execute(raw, run, commands::predict),
        Command::Compile => commands::execute(raw, run, commands::compile),
        Command::Decompose => commands::execute(raw, run, commands::decompose),
        Command::Convergence => commands::execute(raw, run, commands::convergence),
        Command::Verify => commands::execute(raw, run, commands::verify),
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = cli.command;

    if let Err(e) = std::fs::create_dir_all(&cli.out) {
        eprintln!(
            "error: cannot create output directory {}: {e}",
            cli.out.display()
        );
        return ExitCode::from(2);
    }
    let raw = match &cli.config {
        Some(path) => match std::fs::read(path) {
            Ok(bytes) => Some(bytes),
            Err(e) => {
                eprintln!("error: cannot read config {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let run = Run {
        seed: cli.seed,
        out: &cli.out,
    };

    let (resolved, result) = dispatch(command, raw.as_deref(), &run);
    let config_hash = match &resolved {
        Some(v) => sha256_hex(&numfmt::to_json_compact(v).unwrap_or_default()),
        None => sha256_hex(raw.as_deref().unwrap_or_default()),
    };
    let (code, metrics, error) = match result {
        Ok(metrics) => (0, metrics, None),
        Err(f) => (f.code, f.metrics, Some(f.message)),
    };
    let manifest = json!({
        "command": command.name(),
        "status": status_name(code),
        "exit_code": code,
        "seed": cli.seed,
        "config_sha256": config_hash,
        "config": resolved,
        "versions": { "mpnet": env!("CARGO_PKG_VERSION") },
        "metrics": metrics,
        "error": error,
    });
    let manifest_path = cli.out.join(format!("{}.manifest.json", command.name()));
    match numfmt::to_json_bytes(&manifest) {
        Ok(bytes) => {
            if let Err(e) = std::fs::write(&manifest_path, bytes) {
                eprintln!(
                    "error: cannot write manifest {}: {e}",
                    manifest_path.display()
                );
            }
        }
        Err(e) => eprintln!("error: cannot encode manifest: {e}"),
    }
    if let Some(msg) = error {
        eprintln!("error: {msg}");
    }
    ExitCode::from(code)
}
