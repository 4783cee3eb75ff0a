use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qexp_cli::commands::{self, Outcome};
use qexp_cli::{CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(name = "qexp", version, about = "Quadratic-exponential BSDE experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory; overrides `output_dir` of the config.
    #[arg(long, global = true, env = "QEXP_OUT_DIR")]
    out: Option<PathBuf>,

    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and persist a path bundle.
    Simulate,
    /// Solve the configured BSDE.
    Solve,
    /// Solve the approximation ladder and tabulate its convergence.
    Ladder,
    /// Run the configured property checks.
    Verify,
    /// Re-check manifests and summarize results in the output directory.
    Report,
}

fn load(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("qexp-out"));
    Ok((cfg, out))
}

fn run(cli: &Cli) -> Result<Outcome, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    if let Command::Report = cli.command {
        let (_, out) = load(cli)?;
        return commands::report(Path::new(&out));
    }
    let (cfg, out) = load(cli)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &out),
        Command::Solve => commands::solve(&cfg, &out),
        Command::Ladder => commands::ladder(&cfg, &out),
        Command::Verify => commands::verify(&cfg, &out),
        Command::Report => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            for line in &outcome.lines {
                println!("{line}");
            }
            ExitCode::from(if outcome.passed { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("qexp: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
