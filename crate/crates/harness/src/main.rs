use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use redress_harness::{junit, run_all, run_embedded, scenarios, select, Api, HarnessError, ScenarioResult};

#[derive(Parser)]
#[command(name = "harness", about = "Adversarial scenarios against the redress service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario, or `all`.
    Run {
        scenario: String,
        /// Seed for interleaving the actors' scripts.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Base URL of a running service started in harness mode. An
        /// in-process service is used when absent.
        #[arg(long)]
        service: Option<String>,
        /// Write a JUnit XML report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// List the scenarios.
    List,
}

async fn run(name: &str, seed: u64, service: Option<&str>) -> Result<Vec<ScenarioResult>, HarnessError> {
    let selected = select(name)?;
    match service {
        Some(url) => Ok(run_all(&selected, &Api::new(url), seed, false).await?),
        None => run_embedded(&selected, seed).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for s in scenarios::all() {
                println!("{:<22} {}", s.name, s.summary);
            }
            ExitCode::SUCCESS
        }
        Command::Run { scenario, seed, service, report } => {
            let results = match run(&scenario, seed, service.as_deref()).await {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("harness: {e}");
                    return ExitCode::from(2);
                }
            };
            for r in &results {
                print!("{}", r.trace());
            }
            if let Some(path) = report {
                if let Err(e) = std::fs::write(&path, junit::render(&results)) {
                    eprintln!("harness: cannot write {}: {e}", path.display());
                    return ExitCode::from(2);
                }
            }
            let passed = results.iter().filter(|r| r.passed()).count();
            println!("{passed}/{} scenarios passed", results.len());
            if passed == results.len() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
