use std::path::PathBuf;
use std::process::ExitCode;

use bridgefit::{report, resume, run, synth, CliError, LoadedConfig, ReportOptions, RunOptions, SensorSpec};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bridgefit", version = bridgefit::commands::VERSION, about = "Multi-resolution Bayesian field identification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate noisy observations from the configured truth.
    Synth {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the full hierarchy from the prior.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Worker threads (results do not depend on this).
        #[arg(short, long)]
        workers: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Continue from a particle archive through the remaining levels.
    Resume {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        archive: PathBuf,
        #[arg(short, long)]
        workers: Option<usize>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Re-derive summaries (and optional predictive draws) from an archive.
    Report {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        archive: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// JSON array of points (e.g. `[[0.25], [0.5]]`) at which to sample the predictive distribution.
        #[arg(long)]
        predict_sensors: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { config } => {
            let cfg = LoadedConfig::load(&config)?;
            let file = synth(&cfg)?;
            eprintln!("wrote {} observations to {}", file.values.len(), cfg.data_path()?.display());
        }
        Command::Run { config, workers, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let out = run(&cfg, &RunOptions { workers, output })?;
            eprintln!("artifacts in {}", out.output.display());
        }
        Command::Resume { config, archive, workers, output } => {
            let cfg = LoadedConfig::load(&config)?;
            let out = resume(&cfg, &archive, &RunOptions { workers, output })?;
            eprintln!("artifacts in {}", out.output.display());
        }
        Command::Report { config, archive, output, predict_sensors, draws, seed, threshold } => {
            let cfg = LoadedConfig::load(&config)?;
            // relative to the working directory, not the config file
            let predict_sensors = predict_sensors.map(std::path::absolute).transpose()?;
            let opts = ReportOptions {
                output,
                predict_sensors: predict_sensors.map(|path| SensorSpec::File { path }),
                draws,
                seed,
                threshold,
            };
            let sigma = report(&cfg, &archive, &opts)?;
            eprintln!("model-error sd / mean |response|: median {:.4}", sigma.relative_q50);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
