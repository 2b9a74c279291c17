use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qsurf::{execute, parse_config, Command};

/// Quadrature surfaces by grid minimization of Bernoulli functionals.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the configured one.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "QSURF_THREADS")]
    threads: Option<usize>,
    /// `key.path=value`, applied to the configuration before validation.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("qsurf: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match &cli.config {
        Some(p) => match parse_config(p, &cli.overrides) {
            Ok(c) => Some(c),
            Err(e) => {
                eprintln!("qsurf: {e:#}");
                return ExitCode::from(1);
            }
        },
        None if cli.command.needs_config() => {
            eprintln!("qsurf: `{}` needs --config", cli.command.name());
            return ExitCode::from(1);
        }
        None => None,
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.as_ref().map(|c| c.output.clone()))
        .unwrap_or_else(|| PathBuf::from("qsurf-out"));
    let manifest = execute(cli.command, cfg.as_ref(), &out);
    for c in &manifest.checks {
        let value = c.value.map_or("-".into(), |v| format!("{v:.6e}"));
        let threshold = c.threshold.map_or("-".into(), |v| format!("{v:.6e}"));
        println!("{:<14} {:<36} value {value:<14} threshold {threshold}", format!("{:?}", c.verdict), c.name);
    }
    if let Some(e) = &manifest.error {
        eprintln!("qsurf: {e}");
    }
    println!("{}: {:?} ({})", manifest.subcommand, manifest.status, out.display());
    ExitCode::from(manifest.status.exit_code())
}
