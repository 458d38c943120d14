use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use msno_cli::commands::{self, parse_range, Common, Equation, Method, Reference, SolveArgs};
use msno_cli::config::ExperimentConfig;
use msno_core::field::ForcingKind;
use msno_neural::train::LossKind;

#[derive(Parser)]
#[command(name = "msno", version, about = "Multiscale solver with learned local bases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON experiment configuration; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample coefficient fields and forcing, with optional fine references.
    GenData {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value = "unit")]
        forcing: ForcingKind,
        #[arg(long, default_value = "both")]
        reference: Reference,
    },
    /// Classical offline stage for every sample of a dataset.
    BuildBasis {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_range)]
        range: Option<std::ops::Range<usize>>,
    },
    /// Train per-domain-type predictors.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Basis store from build-basis; computed on the fly otherwise.
        #[arg(long)]
        basis: Option<PathBuf>,
        #[arg(long, value_parser = parse_range)]
        range: Option<std::ops::Range<usize>>,
        #[arg(long)]
        loss: Option<LossKind>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Solve one problem.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "gmsfem")]
        method: Method,
        #[arg(long, default_value = "diffusion")]
        equation: Equation,
        /// Forcing to sample when no dataset is given.
        #[arg(long, default_value = "unit")]
        forcing: ForcingKind,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        loss: Option<LossKind>,
    },
    /// Error report over a dataset.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_range)]
        range: Option<std::ops::Range<usize>>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "diffusion")]
        equation: Equation,
        /// Re-solve the fine references instead of reading cached ones.
        #[arg(long)]
        recompute: bool,
        #[arg(long)]
        loss: Option<LossKind>,
    },
    /// Timing table and breakeven point.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 3)]
        samples: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn common(a: &CommonArgs) -> anyhow::Result<Common> {
    Ok(Common { seed: a.seed, config: ExperimentConfig::load(a.config.as_deref())?, out: a.out.clone() })
}

fn run(cli: Cli) -> anyhow::Result<serde_json::Value> {
    match cli.command {
        Command::GenData { common: c, samples, forcing, reference } => commands::gen_data(&common(&c)?, samples, forcing, reference),
        Command::BuildBasis { common: c, data, range } => commands::build_basis(&common(&c)?, &data, range),
        Command::Train { common: c, data, basis, range, loss, epochs } => commands::train(&common(&c)?, &data, basis.as_deref(), range, loss, epochs),
        Command::Solve { common: c, method, equation, forcing, data, sample, checkpoint, loss } => commands::solve(
            &common(&c)?,
            &SolveArgs { method, equation, forcing, data: data.as_deref(), sample, checkpoint: checkpoint.as_deref(), loss },
        ),
        Command::Evaluate { common: c, data, range, checkpoint, equation, recompute, loss } => {
            commands::evaluate(&common(&c)?, &data, range, checkpoint.as_deref(), equation, recompute, loss)
        }
        Command::Bench { common: c, samples, checkpoint } => commands::bench(&common(&c)?, samples, checkpoint.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return ExitCode::from(2);
        }
    };
    msno_cli::init_threads();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": msno_cli::error_kind(&e), "message": format!("{e:#}") }));
            ExitCode::FAILURE
        }
    }
}
