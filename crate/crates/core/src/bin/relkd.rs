use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use relkd::cli::{self, CliError};
use relkd::config::RunConfig;
use relkd::gradcheck;

#[derive(Parser)]
#[command(
    name = "relkd",
    version,
    about = "Relational distillation for occluded inputs"
)]
struct Args {
    /// key=value configuration file; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset, masks, manifest and evaluation pairs.
    GenData,
    /// Train the student on a generated dataset.
    Train {
        /// Dataset directory; defaults to `data_dir` from the configuration.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Verification accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// CSV of `a,b,same` sample index pairs; defaults to the dataset's pairs.csv.
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Check analytic gradients against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = gradcheck::POINTS)]
        points: usize,
    },
    /// Train the five loss variants over the configured seeds.
    Ablate,
}

fn run(args: Args) -> Result<String, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        cfg.sync_seed();
    }
    match args.command {
        Command::GenData => {
            let out = args.out.unwrap_or_else(|| cfg.data_dir.clone());
            cli::gen_data(&cfg, &out)
        }
        Command::Train { data } => {
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            cli::train(&cfg, &data, &cli::resolve_out(args.out, &cfg))
        }
        Command::Eval {
            checkpoint,
            pairs,
            data,
        } => {
            let data = data.unwrap_or_else(|| cfg.data_dir.clone());
            let pairs = pairs.unwrap_or_else(|| data.join("pairs.csv"));
            cli::eval(
                &checkpoint,
                &pairs,
                &data,
                &cli::resolve_out(args.out, &cfg),
            )
        }
        Command::Gradcheck { points } => cli::gradcheck(points, cfg.seed),
        Command::Ablate => cli::ablate(&cfg, &cli::resolve_out(args.out, &cfg)),
    }
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("relkd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
