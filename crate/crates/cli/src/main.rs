mod config;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{ConfigError, RunConfig, Stage};
use stages::CliError;

/// Composer style classification over bootleg scores.
#[derive(Debug, Parser)]
#[command(name = "stylus", version)]
struct Cli {
    /// Pipeline stage to run.
    stage: Stage,
    /// Run config: `key = value` lines with optional `[stage]` sections.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// `key=value`, applied after the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn report_config(stage: Stage, err: &ConfigError) {
    match err {
        ConfigError::Fields(fields) => {
            for f in fields {
                eprintln!("config error [{stage}] {f}");
            }
        }
        other => eprintln!("config error: {other}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = match RunConfig::load(&cli.config, cli.stage, cli.seed, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            report_config(cli.stage, &e);
            return ExitCode::from(2);
        }
    };
    log::info!("{} (config {})", cli.stage, cfg.hash());
    match stages::run(&cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(e)) => {
            report_config(cli.stage, &e);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
