use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stochint_cli::{execute, write_outputs, CliError, ExperimentConfig, OutputFormat};

#[derive(Parser)]
#[command(name = "stochint", version, about = "Run stochint experiments from a TOML config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Worker threads; results do not depend on this.
        #[arg(long)]
        workers: Option<usize>,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = OutputFormat::Both)]
        format: OutputFormat,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let Command::Run {
        config,
        out,
        workers,
        seed,
        format,
    } = cli.command;
    let src = std::fs::read_to_string(&config)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", config.display())))?;
    let mut config = ExperimentConfig::parse(&src)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        if w == 0 {
            return Err(CliError::Validation("--workers must be at least 1".to_string()));
        }
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    let output = pool.install(|| execute(&config))?;
    write_outputs(&out, &output, format)?;
    match output.check_failure {
        Some(msg) => Err(CliError::Check(msg)),
        None => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stochint: {}", e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
