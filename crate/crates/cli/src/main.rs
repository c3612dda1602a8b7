use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qubus_cli::{
    cmd_fig3, cmd_fig4, cmd_mc, cmd_purify, cmd_table, cmd_verify_circuit, cmd_verify_circuit_with, faulty_unitaries,
    Artifacts, CliError, RunConfig,
};

#[derive(Parser)]
#[command(name = "qubus", version, about = "Qubus quantum-repeater simulator")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    trials: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-photon source purification by the QND module.
    Purify,
    /// Link success probability against fidelity for several segment lengths.
    Fig3,
    /// Distribution time and memory per station for the reference frequencies.
    Table,
    /// Distribution time against total distance.
    Fig4,
    /// Invariant checks of the local parity circuit.
    VerifyCircuit {
        /// Flip one sign of U2 before checking.
        #[arg(long)]
        inject_fault: bool,
    },
    /// Seeded Monte Carlo of link attempts and chain distribution.
    Mc,
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let text = match &cli.config {
        Some(path) => {
            std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.trials {
        cfg.trials = t;
    }
    if let Some(o) = &cli.out {
        cfg.output_path = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load(cli)?;
    let out: Artifacts = match cli.command {
        Command::Purify => cmd_purify(&cfg)?,
        Command::Fig3 => cmd_fig3(&cfg)?,
        Command::Table => cmd_table(&cfg)?,
        Command::Fig4 => cmd_fig4(&cfg)?,
        Command::VerifyCircuit { inject_fault: false } => cmd_verify_circuit()?,
        Command::VerifyCircuit { inject_fault: true } => cmd_verify_circuit_with(&faulty_unitaries())?,
        Command::Mc => cmd_mc(&cfg)?,
    };
    out.write_to(&cfg.output_path)?;
    print!("{}", out.report);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
