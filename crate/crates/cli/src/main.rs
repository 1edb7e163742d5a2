//! `dmhe`: run estimation experiments, check stability conditions, compare variants.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dmhe::coordinator::Variant;
use dmhe::harness::{run_experiment, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dmhe", version, about = "Distributed moving horizon estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate, estimate, and write trajectories and RMSE tables.
    Run(Common),
    /// Report the spectral condition and Assumption-1 margins of a linear plant.
    CheckStability(Common),
    /// Run every configured variant and print median and per-seed RMSEs.
    Compare(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this variant.
    #[arg(long)]
    variant: Option<Variant>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of instants.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Exit codes: 1 for usage, config and file errors, 2 for failures while running.
enum Failure {
    Config(String),
    Runtime(String),
}

fn prepare(c: &Common) -> Result<Experiment, Failure> {
    let mut cfg = ExperimentConfig::load(&c.config).map_err(|e| Failure::Config(e.to_string()))?;
    if let Some(v) = c.variant {
        cfg.variants = vec![v];
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
    }
    if let Some(n) = c.steps {
        cfg.steps = n;
    }
    if let Some(d) = &c.output_dir {
        cfg.output_dir = d.clone();
    }
    let base = c.config.parent().unwrap_or(Path::new("."));
    Experiment::prepare(cfg, base).map_err(|e| Failure::Config(e.to_string()))
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run(c) => {
            let exp = prepare(&c)?;
            print!("{}", exp.describe());
            let report = run_experiment(&exp).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!();
            for r in &report.runs {
                match (r.rmse, &r.failure) {
                    (Some(x), None) => println!("seed {} {}: rmse = {x:.6}", r.seed, r.variant.name()),
                    (_, Some(f)) => eprintln!("seed {} {}: failed at {f}", r.seed, r.variant.name()),
                    (None, None) => {}
                }
            }
            println!("artifacts written to {}", exp.config.output_dir.display());
        }
        Command::CheckStability(c) => {
            let exp = prepare(&c)?;
            if exp.linear_model().is_none() {
                return Err(Failure::Config("check-stability needs a linear plant".into()));
            }
            let report = exp.stability().map_err(|e| Failure::Runtime(e.to_string()))?;
            let text = report.to_text();
            let dir = &exp.config.output_dir;
            fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("stability.txt"), &text)).map_err(|e| Failure::Runtime(e.to_string()))?;
            let head: Vec<&str> = text.lines().take_while(|l| !l.starts_with("k,")).collect();
            println!("{}", head.join("\n"));
            println!("per-instant margins written to {}", dir.join("stability.txt").display());
        }
        Command::Compare(c) => {
            let exp = prepare(&c)?;
            print!("{}", exp.describe());
            let report = run_experiment(&exp).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!();
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
