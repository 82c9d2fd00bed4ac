//! Command-line driver: validate configs, solve offline baselines, or run
//! the full experiment grid.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use omdpd::config::Config;
use omdpd::env::Simulator;
use omdpd::harness::{exit_code_for, run_check, run_experiment, solve_cell_baseline, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "omdpd", about = "Constrained-MDP online learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Suppress per-cell progress lines.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by the config.
    Run { config: PathBuf },
    /// Solve and print the offline baselines only.
    Baseline { config: PathBuf },
    /// Parse and validate the config, printing the expanded cells.
    Check { config: PathBuf },
}

fn load(path: &PathBuf) -> Result<Config, ExitCode> {
    Config::from_path(path).map_err(|e| {
        eprintln!("config error: {e}");
        ExitCode::from(EXIT_CONFIG as u8)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run { config } => {
            let cfg = match load(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_experiment(&cfg, cli.out_dir.as_deref(), cli.quiet) {
                Ok(code) => ExitCode::from(code as u8),
                Err(e) => {
                    eprintln!("run failed: {e}");
                    ExitCode::from(exit_code_for(&e) as u8)
                }
            }
        }
        Command::Baseline { config } => {
            let cfg = match load(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            for (mode, seed) in cfg.cells() {
                let env_cfg = cfg.env_config(mode, seed);
                let sim = match Simulator::from_config(env_cfg.clone()) {
                    Ok(s) => s,
                    Err(e) => {
                        eprintln!("environment generation failed: {e}");
                        return ExitCode::from(exit_code_for(&e) as u8);
                    }
                };
                match solve_cell_baseline(&sim.env, &env_cfg, cfg.run.episodes) {
                    Ok(b) => println!(
                        "{mode:?} seed={seed} baseline={:.12}{}",
                        b.value,
                        if b.fallback { " (fallback)" } else { "" }
                    ),
                    Err(e) => {
                        eprintln!("baseline failed for {mode:?} seed={seed}: {e}");
                        return ExitCode::from(exit_code_for(&e) as u8);
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Command::Check { config } => {
            let cfg = match load(config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_check(&cfg) {
                Ok(code) => ExitCode::from(code as u8),
                Err(e) => {
                    eprintln!("check failed: {e}");
                    ExitCode::from(exit_code_for(&e) as u8)
                }
            }
        }
    }
}
