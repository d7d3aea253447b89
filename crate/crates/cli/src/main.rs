use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fkdegen_cli::{run, Command, Flags};

#[derive(Parser)]
#[command(name = "fkdegen", version, about = "Feynman-Kac Monte Carlo and PDE oracle for degenerate diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    common: Common,
}

#[derive(Subcommand)]
enum Sub {
    /// Classify the boundary x_d = 0 of the configured model.
    Classify,
    /// Monte Carlo value of a boundary-value problem.
    Price,
    /// Optimal stopping value of an obstacle problem (LSMC, plus grid policy).
    Exercise,
    /// Finite-difference solution on a grid.
    Oracle,
    /// Monte Carlo against the grid solution at one or more points.
    Compare,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set sim.dt=0.001`. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE", global = true)]
    overrides: Vec<String>,
    /// Worker threads (falls back to FKDEGEN_THREADS).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for CSV artifacts.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Write the first N simulated paths to paths.csv.
    #[arg(long, value_name = "N", global = true)]
    dump_paths: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let command = match cli.command {
        Sub::Classify => Command::Classify,
        Sub::Price => Command::Price,
        Sub::Exercise => Command::Exercise,
        Sub::Oracle => Command::Oracle,
        Sub::Compare => Command::Compare,
    };
    let Some(config) = cli.common.config else {
        eprintln!("error: --config is required");
        return ExitCode::from(2);
    };
    let flags = Flags {
        config,
        overrides: cli.common.overrides,
        threads: cli.common.threads,
        out_dir: cli.common.out_dir,
        dump_paths: cli.common.dump_paths,
    };
    match run(command, &flags) {
        Ok(report) => {
            // a closed pipe (e.g. `| head`) is not a failure of the run
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            let _ = writeln!(std::io::stdout(), "{}", e.to_json());
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code as u8)
        }
    }
}
