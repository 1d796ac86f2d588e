use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use zeno_cli::config::{self, ConfigError};
use zeno_cli::{run, CliError, Overrides};

#[derive(Parser)]
#[command(name = "zeno", version, about = "Run measured-qubit experiments from TOML configs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV table and manifest.
    Run {
        config: PathBuf,
        /// Output directory, overriding `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Random seed, overriding `seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Use the full-size settings instead of the desk-scale defaults.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            paper_scale,
        } => {
            let overrides = Overrides {
                out,
                seed,
                paper_scale,
            };
            let result = config::load(&config)
                .map_err(CliError::from)
                .and_then(|cfg| run(&cfg, &overrides));
            match result {
                Ok(report) => {
                    for f in &report.outcome.files {
                        println!("wrote {}", f.display());
                    }
                    println!("wrote {}", report.manifest.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(e.exit_code())
                }
            }
        }
        Command::Validate { config } => match config::load(&config) {
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
            Ok(cfg) => {
                let diags = config::validate(&cfg);
                if diags.is_empty() {
                    println!("{}: ok", config.display());
                    ExitCode::SUCCESS
                } else {
                    eprintln!("error: {}", ConfigError::Invalid(diags));
                    ExitCode::from(2)
                }
            }
        },
    }
}
