mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

/// Errors carry the exit code: config problems exit 2, a failed audit
/// exits 1, a numerical breakdown exits 3.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Audit(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Audit(m) => write!(f, "audit failure: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

pub struct RunContext {
    pub out: PathBuf,
    pub seed: u64,
    pub force: bool,
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the report and CSV artifacts
    #[arg(long, default_value = "otsl-out")]
    out: PathBuf,
    /// Seed for every random choice made by the run
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (falls back to OTSL_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,
    /// Overwrite artifacts already present in the output directory
    #[arg(long)]
    force: bool,
}

#[derive(Parser)]
#[command(name = "otsl", version, about = "Optimal transport stability lab", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Whitney cubes and the chain family for a domain
    Decompose(RunArgs),
    /// Spectral gap of an overlap graph against its best sweep cut
    GraphAudit(RunArgs),
    /// Exact optimal transport between two discrete measures
    OtSolve(RunArgs),
    /// Global-vs-local variance inequality on a cover
    GlueAudit(RunArgs),
    /// Empirical stability exponent from perturbed discretizations
    StabilityExponent(RunArgs),
    /// Closed-form sharpness family with ratio band checks
    Sharpness(RunArgs),
    /// Room-and-passage transport ratios
    Counterexample {
        #[command(flatten)]
        run: RunArgs,
        /// Override the largest cut index from the config
        #[arg(long)]
        n_max: Option<usize>,
    },
}

fn load_config<T: DeserializeOwned>(
    path: &PathBuf,
) -> Result<(T, serde_json::Value), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let raw: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    let cfg: T = serde_json::from_value(raw.clone())
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok((cfg, raw))
}

fn require_config(args: &RunArgs) -> Result<&PathBuf, CliError> {
    args.config
        .as_ref()
        .ok_or_else(|| CliError::Config("missing --config".into()))
}

fn init_threads(args: &RunArgs) -> Result<(), CliError> {
    let n = match args.threads {
        Some(n) => Some(n),
        None => match std::env::var("OTSL_THREADS") {
            Ok(s) => Some(s.parse::<usize>().map_err(|_| {
                CliError::Config(format!("OTSL_THREADS=`{s}` is not a thread count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(CliError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .ok();
    }
    Ok(())
}

fn context(args: &RunArgs) -> RunContext {
    RunContext {
        out: args.out.clone(),
        seed: args.seed,
        force: args.force,
    }
}

fn dispatch(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Decompose(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::decompose(&context(&args), cfg, raw)
        }
        Command::GraphAudit(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::graph_audit(&context(&args), cfg, raw)
        }
        Command::OtSolve(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::ot_solve(&context(&args), cfg, raw)
        }
        Command::GlueAudit(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::glue_audit(&context(&args), cfg, raw)
        }
        Command::StabilityExponent(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::stability_exponent(&context(&args), cfg, raw)
        }
        Command::Sharpness(args) => {
            init_threads(&args)?;
            let (cfg, raw) = load_config(require_config(&args)?)?;
            commands::sharpness(&context(&args), cfg, raw)
        }
        Command::Counterexample { run, n_max } => {
            init_threads(&run)?;
            let (mut cfg, raw) = match &run.config {
                Some(path) => load_config::<config::CounterexampleConfig>(path)?,
                None => {
                    let cfg = config::CounterexampleConfig::default();
                    let raw = serde_json::to_value(&cfg)
                        .map_err(|e| CliError::Numerical(e.to_string()))?;
                    (cfg, raw)
                }
            };
            if let Some(n) = n_max {
                cfg.n_max = n;
            }
            commands::counterexample(&context(&run), cfg, raw)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("otsl: {e}");
            match e {
                CliError::Audit(_) => ExitCode::from(1),
                CliError::Config(_) => ExitCode::from(2),
                CliError::Numerical(_) => ExitCode::from(3),
            }
        }
    }
}
