use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use pada_cli::{commands, ExperimentConfig, RunOptions};

#[derive(Parser)]
#[command(name = "pada", version, about = "Train and evaluate PU domain adaptation models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides PADA_OUT_DIR and the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as a list ("0,1,2") or range ("0..3").
    #[arg(long, value_parser = commands::parse_seeds)]
    seeds: Option<Vec<u64>>,
    /// Worker threads for grid search (0 picks automatically).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

impl From<Common> for RunOptions {
    fn from(c: Common) -> Self {
        RunOptions {
            config: c.config,
            out: c.out,
            seeds: c.seeds,
            jobs: c.jobs,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Grid-search, train, and evaluate every configured method.
    Run(Common),
    /// Improvement ratios and feature correlations from a finished run.
    Analyze {
        /// Config whose output directory holds the run.
        #[arg(long, required_unless_present = "out")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// CSV with setting,method,accuracy columns to use instead of comparison.csv.
        #[arg(long)]
        accuracies: Option<PathBuf>,
    },
    /// Compare PADA and PADA_F accuracy and aligned-space discrimination.
    Ablate(Common),
    /// Write synthetic settings to CSV.
    Generate(Common),
    /// Aggregate ratings settings into per-user CSV tables.
    Aggregate(Common),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(c) => {
            let manifest = commands::run(&c.into())?;
            for (k, v) in &manifest.failures {
                eprintln!("failed: {k}: {v}");
            }
        }
        Command::Analyze {
            config,
            out,
            accuracies,
        } => {
            let out = match (out, config) {
                (Some(o), _) => o,
                (None, Some(c)) => ExperimentConfig::load(&c)?.output_dir(None),
                (None, None) => unreachable!("clap requires one of --out/--config"),
            };
            commands::analyze(&out, accuracies.as_deref())?;
            print!("{}", std::fs::read_to_string(out.join("analysis.txt"))?);
        }
        Command::Ablate(c) => {
            let opts: RunOptions = c.into();
            commands::ablate(&opts)?;
            let out = ExperimentConfig::load(&opts.config)?.output_dir(opts.out.as_deref());
            print!("{}", std::fs::read_to_string(out.join("ablation.txt"))?);
        }
        Command::Generate(c) => {
            for dir in commands::generate(&c.into())? {
                println!("{}", dir.display());
            }
        }
        Command::Aggregate(c) => {
            for dir in commands::aggregate(&c.into())? {
                println!("{}", dir.display());
            }
        }
    }
    Ok(())
}
