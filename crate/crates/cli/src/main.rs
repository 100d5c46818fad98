use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ectonas_cli::{model_inspect, parse_shape, run_command, topo_show, CliError, Overrides, RunConfig};
use ectonas_core::evolution::SearchMode;
use ectonas_core::net::Shape;
use ectonas_core::topology::Topology;

#[derive(Parser)]
#[command(name = "ectonas", version, about = "Evolutionary cross-topology architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search, baseline or random experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        mode: Option<SearchMode>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Starting-topology catalog.
    Topo {
        #[command(subcommand)]
        command: TopoCommand,
    },
    /// Saved model files.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
}

#[derive(Subcommand)]
enum TopoCommand {
    /// Print a topology's layers and parameter count.
    Show {
        name: Topology,
        #[arg(long, default_value = "28x28x1", value_parser = parse_shape)]
        input: Shape,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Print a model's descriptor and parameter count.
    Inspect { file: PathBuf },
}

fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run {
            config,
            seed,
            mode,
            alpha,
            budget,
            out,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            cfg.apply(&Overrides {
                seed,
                mode,
                alpha,
                budget,
                out,
            });
            let summary = run_command(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
        }
        Command::Topo {
            command: TopoCommand::Show { name, input, classes },
        } => print!("{}", topo_show(name, input, classes)?),
        Command::Model {
            command: ModelCommand::Inspect { file },
        } => print!("{}", model_inspect(&file)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
