//! `edlab`: scenario runner for the entropic dynamics laboratory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod catalog;
mod config;
mod run;

use config::{ConfigError, Overrides, Scenario};

const EXIT_VALIDATION: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edlab",
    version,
    about = "Run entropic dynamics scenarios from TOML configs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        /// Output root (overrides the config and $EDLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Fixed run label instead of a timestamp.
        #[arg(long)]
        label: Option<String>,
    },
    /// Print every scenario kind and its parameters.
    List,
    /// Check a config without running it.
    Validate { config: PathBuf },
}

fn load(path: &Path, overrides: Overrides) -> Result<Scenario, ConfigError> {
    let cfg = config::load_config(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    config::prepare(cfg, base, overrides)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            print!("{}", catalog::catalog());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config, Overrides::default()) {
            Ok(s) => {
                println!("{}: valid {} scenario", config.display(), s.kind);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid config: {e}");
                ExitCode::from(EXIT_VALIDATION)
            }
        },
        Command::Run { config, out, label } => {
            let scenario = match load(
                &config,
                Overrides {
                    output_dir: out,
                    label,
                },
            ) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("invalid config: {e}");
                    return ExitCode::from(EXIT_VALIDATION);
                }
            };
            let dir = scenario.artifact_dir();
            let result = run::execute(&scenario).and_then(|o| {
                run::write_artifacts(&dir, &o.artifacts)?;
                Ok(o)
            });
            match result {
                Ok(o) => {
                    println!("{}: {} [{}]", scenario.kind, o.headline, dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{} scenario failed: {e}", scenario.kind);
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
