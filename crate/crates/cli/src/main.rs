mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Parser, Subcommand};

use commands::{Failure, Outcome, ResultExt};
use config::Overrides;

/// Simulates networked belief dynamics and checks their concentration bounds.
///
/// Exit codes: 0 success, 2 configuration error, 3 runtime error,
/// 4 a verified bound was violated.
#[derive(Debug, Parser)]
#[command(name = "belieflab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    trials: Option<usize>,
    #[arg(long, global = true, value_name = "K")]
    horizon: Option<usize>,
    /// Worker threads; defaults to the number of cores. Results do not depend on it.
    #[arg(long, global = true, value_name = "N")]
    parallel: Option<usize>,
    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one trajectory; writes trace.csv, summary.csv and summary.json.
    Run,
    /// Compute the transient time; writes bounds.json.
    Bounds,
    /// Monte Carlo checks of the bounds; writes verify.json.
    McVerify,
    /// Build the covering used by the bounds; writes covering.json.
    Covering,
    /// Source localization on a grid; uses a built-in scenario without --config.
    LocalizeDemo,
    /// Check the configuration and print a summary; writes nothing.
    Validate,
}

fn execute(cli: &Cli) -> Outcome<commands::Report> {
    if let Some(n) = cli.parallel {
        if n == 0 {
            return Err(Failure::Config(anyhow!("--parallel must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().runtime()?;
    }
    let overrides = Overrides { seed: cli.seed, trials: cli.trials, horizon: cli.horizon };
    let prepared = match &cli.config {
        Some(path) => Some(config::load(path).and_then(|c| config::prepare(c, &overrides)).config()?),
        None if matches!(cli.command, Command::LocalizeDemo) => None,
        None => return Err(Failure::Config(anyhow!("--config is required for this command"))),
    };
    if let Some(p) = &prepared {
        p.warnings.iter().for_each(|w| log::warn!("{w}"));
    }
    match (&cli.command, prepared.as_ref()) {
        (Command::LocalizeDemo, p) => commands::localize_cmd(p, cli.seed.unwrap_or(0), cli.horizon.unwrap_or(2000)),
        (Command::Run, Some(p)) => commands::run_cmd(p),
        (Command::Bounds, Some(p)) => commands::bounds_cmd(p),
        (Command::McVerify, Some(p)) => commands::mc_verify_cmd(p),
        (Command::Covering, Some(p)) => commands::covering_cmd(p),
        (Command::Validate, Some(p)) => commands::validate_cmd(p),
        (_, None) => unreachable!("config presence checked above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("BELIEFLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    let outcome = execute(&cli).and_then(|report| {
        let written = report.artifacts.write(&cli.out).runtime()?;
        if !cli.quiet {
            report.lines.iter().for_each(|l| println!("{l}"));
            written.iter().for_each(|f| println!("wrote {}", f.display()));
        }
        if report.failures.is_empty() {
            Ok(())
        } else {
            Err(Failure::Verification(report.failures))
        }
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Config(e) => eprintln!("configuration error: {e:#}"),
                Failure::Runtime(e) => eprintln!("error: {e:#}"),
                Failure::Verification(items) => {
                    eprintln!("verification failed:");
                    items.iter().for_each(|i| eprintln!("  {i}"));
                }
            }
            ExitCode::from(f.exit_code())
        }
    }
}
