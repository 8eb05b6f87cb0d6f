mod artifacts;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cogdrive::config::Preset;

/// Synthetic driving cohorts, cognitive-factor encoders and personalized HMI
/// decisions.
#[derive(Parser, Debug)]
#[command(name = "cogdrive", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// JSON run configuration; keys it omits come from the preset.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the config's `seed`.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    /// Overrides the config's `preset`.
    #[arg(long, global = true, value_parser = parse_preset)]
    pub preset: Option<Preset>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "cogdrive-out")]
    pub out: PathBuf,
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: cogdrive::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Samples the cohort and drives every lap of the plan.
    Simulate {
        #[arg(long)]
        n_subjects: Option<usize>,
    },
    /// Trains one encoder on every subject of a simulated dataset.
    Train {
        /// Directory written by `simulate`.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha1: Option<f64>,
        #[arg(long)]
        alpha2: Option<f64>,
        #[arg(long)]
        alpha3: Option<f64>,
    },
    /// Leave-one-subject-out evaluation of the decision rules.
    Eval {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Maximum concurrent folds; has no effect on the outputs.
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Adds the streaming windowed-average rule.
        #[arg(long)]
        streaming: bool,
        /// Comma-separated evaluation seeds; overrides `eval.seeds`.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        seeds: Option<Vec<u64>>,
    },
    /// Factor-behaviour correlations, plus a latent scatter table given a model.
    Report {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Model file written by `train`.
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { n_subjects } => commands::simulate(&cli.global, n_subjects),
        Command::Train {
            data,
            epochs,
            alpha1,
            alpha2,
            alpha3,
        } => commands::train(
            &cli.global,
            &data,
            commands::TrainOverrides {
                epochs,
                alpha1,
                alpha2,
                alpha3,
            },
        ),
        Command::Eval {
            data,
            jobs,
            streaming,
            seeds,
        } => commands::eval(&cli.global, &data, jobs, streaming, seeds),
        Command::Report { data, model } => commands::report(&cli.global, &data, model.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
