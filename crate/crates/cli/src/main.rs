use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use truvar_cli::compare::{compare, TraceSet};
use truvar_cli::experiment::run_experiment;
use truvar_cli::trace::write_atomic;
use truvar_cli::{bounds_json, run_bounds, AnyConfig, BoundsConfig, CliError, ExperimentConfig, Result};

/// Truncated variance reduction experiments.
#[derive(Debug, Parser)]
#[command(name = "truvar", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment configuration.
    Run(RunArgs),
    /// Evaluate the sample-complexity bounds of a `[bounds]` configuration.
    Bounds {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Paired comparison of trace directories against the first one.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a configuration file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Run seeds 0..N.
    #[arg(long, conflicts_with = "seed_list")]
    seeds: Option<u64>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(n) = args.seeds {
        cfg.seeds = Some(n);
        cfg.seed_list = None;
    }
    if let Some(list) = args.seed_list {
        cfg.seed_list = Some(list);
        cfg.seeds = None;
    }
    cfg.validate()?;
    let out = args.out.or_else(|| cfg.output.clone()).ok_or_else(|| CliError::Config {
        path: "output".into(),
        message: "give --out or set output in the config".into(),
    })?;
    let seeds = cfg.seed_values();
    let report = run_experiment(&cfg, &seeds, &out, args.threads)?;
    println!(
        "{} runs written to {} ({} summary rows)",
        report.outcomes.len(),
        out.display(),
        report.summary.len()
    );
    Ok(())
}

fn emit(text: &str, out: Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => write_atomic(&path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => run(args),
        Command::Bounds { config, out } => {
            let cfg = BoundsConfig::load(&config)?;
            emit(&bounds_json(&run_bounds(&cfg)?), out)
        }
        Command::Compare { dirs, out } => {
            let sets = dirs.iter().map(|d| TraceSet::load(d)).collect::<Result<Vec<_>>>()?;
            emit(&compare(&sets)?, out)
        }
        Command::ValidateConfig { config } => {
            match AnyConfig::load(&config)? {
                AnyConfig::Experiment(cfg) => println!(
                    "ok: experiment with {} algorithms x {} seeds, {} checkpoints",
                    cfg.algorithms.len(),
                    cfg.seed_values().len(),
                    cfg.checkpoints().len()
                ),
                AnyConfig::Bounds(_) => println!("ok: bounds"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRUVAR_LOG", "warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
