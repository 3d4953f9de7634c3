use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mortcast_core::data::Sex;
use mortcast_core::pipeline::{run, PipelineConfig, Stage};
use mortcast_core::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Evaluate,
    Mcs,
    Forecast,
    All,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PopulationArg {
    Female,
    Male,
    Both,
}

/// Mortality forecasting pipeline: validation panels, model confidence
/// sets and test-window forecasts.
#[derive(Debug, Parser)]
#[command(name = "mortcast", version)]
struct Args {
    /// Pipeline config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    #[arg(long, value_enum, default_value = "both")]
    population: PopulationArg,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io { .. } => 2,
        Error::MissingArtifact { .. } => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();

    let mut config = match PipelineConfig::from_file(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mortcast: config: {e}");
            return ExitCode::from(exit_code(&e));
        }
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let sexes = match args.population {
        PopulationArg::Female => vec![Sex::Female],
        PopulationArg::Male => vec![Sex::Male],
        PopulationArg::Both => vec![Sex::Female, Sex::Male],
    };
    let stages: &[(Stage, &str)] = match args.stage {
        StageArg::Evaluate => &[(Stage::Evaluate, "evaluate")],
        StageArg::Mcs => &[(Stage::Mcs, "mcs")],
        StageArg::Forecast => &[(Stage::Forecast, "forecast")],
        StageArg::All => &[(Stage::Evaluate, "evaluate"), (Stage::Mcs, "mcs"), (Stage::Forecast, "forecast")],
    };
    for &(stage, name) in stages {
        match run(&config, stage, &sexes) {
            Ok(files) => println!("{name}: wrote {} files under {}", files.len(), config.output_dir.display()),
            Err(e) => {
                eprintln!("mortcast: {name} stage failed: {e}");
                return ExitCode::from(exit_code(&e));
            }
        }
    }
    ExitCode::SUCCESS
}
