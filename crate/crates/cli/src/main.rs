use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use svysens::{Error, Result};
use svysens_cli::commands::{self, Context, Format};
use svysens_cli::config::RunConfig;

/// Survey raking weights and sensitivity analysis for omitted confounding.
#[derive(Debug, Parser)]
#[command(name = "svysens", version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, env = "SVYSENS_OUT")]
    out: Option<PathBuf>,
    /// Seed for bootstrap draws, cross-validation folds and simulation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "SVYSENS_THREADS")]
    threads: Option<usize>,
    /// Only write artifacts of this format; the report JSON is always written.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Solve raking weights; write weights and a balance table.
    Weight,
    /// Unweighted and weighted estimates with the robustness value.
    Summary,
    /// Bias contour grid with benchmark points.
    Contour,
    /// Benchmark confounding strength against observed covariates.
    Benchmark,
    /// Sweep the posited population mean of a partially observed variable.
    Partial,
    /// Estimate the variable graph and search for a separating set.
    Detect,
    /// Percentile bootstrap interval of the adjusted estimate.
    Bootstrap,
    /// Generate a synthetic population, sample, oracle quantities and a config.
    Simulate,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    let cfg = match (&cli.config, cli.command) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Command::Simulate) => RunConfig::default(),
        (None, _) => return Err(Error::Config("--config is required".into())),
    };
    let ctx = Context::new(cfg, cli.out, cli.seed, cli.format)?;
    match cli.command {
        Command::Weight => commands::cmd_weight(&ctx).map(drop),
        Command::Summary => commands::cmd_summary(&ctx).map(drop),
        Command::Contour => commands::cmd_contour(&ctx).map(drop),
        Command::Benchmark => commands::cmd_benchmark(&ctx).map(drop),
        Command::Partial => commands::cmd_partial(&ctx).map(drop),
        Command::Detect => commands::cmd_detect(&ctx).map(drop),
        Command::Bootstrap => commands::cmd_bootstrap(&ctx).map(drop),
        Command::Simulate => commands::cmd_simulate(&ctx).map(drop),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (kind, code) = if e.is_config() { ("config", 2) } else { ("runtime", 1) };
            let body = serde_json::json!({
                "error": { "kind": kind, "exit_code": code, "message": e.to_string() }
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
