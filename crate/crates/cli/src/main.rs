use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedhist::Strategy;
use fedhist_cli::settings::{load_config, parse_override};
use fedhist_cli::{compare, gen_data, run, GenDataArgs, Result};

#[derive(Parser)]
#[command(name = "fedhist", version, about = "K-async federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes metrics.csv and summary.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Threads for local training within a round.
        #[arg(long)]
        workers: Option<usize>,
        /// Override any config key, e.g. `--set history=10 --set speed.max=4`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Run a strategy x seed grid; writes comparison.csv and comparison.json.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        strategies: Vec<Strategy>,
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0.6)]
        target: f64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Write a synthetic Gaussian-blob dataset as CSV.
    GenData {
        #[arg(long)]
        classes: usize,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0.3)]
        spread: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn overrides(specs: &[String], extra: Vec<String>) -> Result<Vec<(String, toml::Value)>> {
    specs.iter().chain(&extra).map(|s| parse_override(s)).collect()
}

fn main_inner(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out, workers, overrides: sets } => {
            let mut extra = Vec::new();
            extra.extend(seed.map(|s| format!("seed={s}")));
            extra.extend(workers.map(|w| format!("workers={w}")));
            let cfg = load_config(&config, &overrides(&sets, extra)?)?;
            let (_, summary) = run(&cfg, &out)?;
            let hit = summary.curve.rounds_to_target.iter().map(|t| match t.round {
                Some(r) => format!("{}@{r}", t.target),
                None => format!("{}@n/a", t.target),
            });
            println!(
                "{} seed {}: final accuracy {:.4}, best {:.4}, mean staleness {:.2}, targets [{}] -> {}",
                summary.strategy,
                summary.seed,
                summary.curve.final_accuracy,
                summary.curve.best_accuracy,
                summary.mean_staleness,
                hit.collect::<Vec<_>>().join(", "),
                out.display()
            );
        }
        Command::Compare { config, strategies, seeds, target, out, jobs, overrides: sets } => {
            let cfg = load_config(&config, &overrides(&sets, vec![format!("targets=[{target}]")])?)?;
            let rows = compare(&cfg, &strategies, &seeds, target, jobs, &out)?;
            print!("{}", fedhist_cli::report::comparison_csv(&rows));
        }
        Command::GenData { classes, dim, per_class, spread, seed, out } => {
            let n = gen_data(&GenDataArgs { classes, dim, per_class, spread, seed, out: out.clone() })?;
            println!("wrote {n} samples to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
