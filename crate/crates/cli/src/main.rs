use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use flowdirector_cli::{commands, exit_code, server};
use flowdirector_core::{Config, Gbps};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(
    name = "flowdirector",
    version,
    about = "Circuit-aware transfer orchestration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the daemons and the HTTP API.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Allocate bandwidth for a topology file offline.
    Allocate {
        topology: PathBuf,
        #[arg(long)]
        granularity: Option<Gbps>,
        /// Print only the JSON document.
        #[arg(long)]
        json: bool,
    },
    /// Run a scenario on virtual time and report the assertions.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the full result document here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Show rules and sites of a running service.
    Status {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
    },
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.command {
        Command::Serve { config } => {
            let cfg = Config::load(&config)?;
            server::serve(cfg)?;
        }
        Command::Allocate {
            topology,
            granularity,
            json,
        } => print!("{}", commands::allocate(&topology, granularity, json)?),
        Command::Simulate {
            scenario,
            seed,
            output,
        } => {
            let result = commands::run_scenario(&scenario, seed)?;
            print!("{}", result.render());
            if let Some(path) = output {
                let doc = serde_json::to_string_pretty(&result)?;
                std::fs::write(&path, doc)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            if !result.passed() {
                return Ok(1);
            }
        }
        Command::Status { url } => print!("{}", commands::status(&url)?),
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Offline runs already print their own event log; daemon warnings repeat
    // every simulated tick there.
    let default = match cli.command {
        Command::Serve { .. } => "info",
        _ => "error",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default)),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
