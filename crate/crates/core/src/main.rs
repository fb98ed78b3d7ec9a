use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hssd::pipeline::{read_config_file, run, Command, RunConfig};

/// Hierarchical species sensitivity analysis from raw bioassay data.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Configuration file of `key = value` lines.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,

    /// Run-size profile: `paper` (default) or `test`.
    #[arg(long, global = true)]
    profile: Option<String>,

    /// Input dataset (CSV).
    #[arg(short, long, global = true)]
    input: Option<PathBuf>,

    /// Output directory.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,

    /// Analyse a single contaminant.
    #[arg(long, global = true)]
    contaminant: Option<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Posterior draws CSV for `simulate` (its `_diagnostics.json` sidecar
    /// must sit next to it).
    #[arg(long, global = true)]
    posterior: Option<PathBuf>,

    /// Simulate even if the Gelman-Rubin gate fails.
    #[arg(long, global = true)]
    allow_unconverged: bool,

    /// Any configuration key, e.g. `--set n_iter=100000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Fit a loglogistic curve per species and contaminant, with bootstrap EC_x intervals.
    FitCurves,
    /// Lognormal SSD on point EC_x values.
    ClassicalSsd,
    /// Sample the hierarchical model.
    FitHier,
    /// Global response, GEC_x and hierarchical SSD from a posterior.
    Simulate,
    /// Write a dataset drawn from the hierarchical model, with its ground truth.
    Synthesize,
    /// Run fit-curves, classical-ssd, fit-hier and simulate in order.
    Report,
}

fn config(cli: &Cli) -> hssd::Result<RunConfig> {
    let mut pairs = match &cli.config {
        Some(path) => read_config_file(path)?,
        None => Vec::new(),
    };
    let mut flag = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v));
        }
    };
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    flag("profile", cli.profile.clone());
    flag("input", path(&cli.input));
    flag("output", path(&cli.output));
    flag("contaminant", cli.contaminant.clone());
    flag("seed", cli.seed.map(|s| s.to_string()));
    flag("posterior", path(&cli.posterior));
    if cli.allow_unconverged {
        flag("allow_unconverged", Some("true".into()));
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| hssd::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    RunConfig::from_pairs(&pairs)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if cli.print_config {
        print!("{}", cfg.to_text());
        return ExitCode::SUCCESS;
    }
    let command = match cli.command {
        Cmd::FitCurves => Command::FitCurves,
        Cmd::ClassicalSsd => Command::ClassicalSsd,
        Cmd::FitHier => Command::FitHier,
        Cmd::Simulate => Command::Simulate,
        Cmd::Synthesize => Command::Synthesize,
        Cmd::Report => Command::Report,
    };
    match run(command, &cfg) {
        Ok(report) => {
            for line in report.summary_lines() {
                println!("{line}");
            }
            println!("outputs written to {}", cfg.output.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
