use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpinn_cli::commands;
use hpinn_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "hpinn", version, about = "Hybrid WENO-Z / PINN solver for 1-D Burgers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the hybrid PINN, solve the reference and write profiles and errors.
    Run(Common),
    /// Error table over the configured (q, dt, nu) grid.
    Sweep(Common),
    /// The plain discrete-time PINN (mask forced to zero).
    Baseline(Common),
    /// Reference WENO-Z solution only.
    Reference(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides outputs.directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel sweep cells.
    #[arg(long)]
    jobs: Option<usize>,
    /// Network seed (overrides network.seed).
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, CliError> {
        let mut cfg = commands::load_config(self.config.as_deref())?;
        if let Some(out) = &self.out {
            cfg.outputs.directory = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.network.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs.unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        })
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(c) => {
            for s in commands::run(&c.resolve()?)? {
                if let Some(&(t, e)) = s.errors.last() {
                    println!("{}: relative error {e:.4e} at t = {t}", s.label);
                }
            }
        }
        Command::Baseline(c) => {
            for s in commands::baseline(&c.resolve()?)? {
                if let Some(&(t, e)) = s.errors.last() {
                    println!("{}: relative error {e:.4e} at t = {t}", s.label);
                }
            }
        }
        Command::Sweep(c) => {
            let rows = commands::sweep(&c.resolve()?, c.jobs())?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            println!("{} cells, {failed} failed", rows.len());
        }
        Command::Reference(c) => commands::reference(&c.resolve()?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
