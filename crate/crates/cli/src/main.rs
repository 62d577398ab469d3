use std::path::PathBuf;
use std::process::ExitCode;

use bridgelab::{builtin, resolve_config, run, RunOptions, BUILTIN_NAMES};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bridgelab", version, about = "Entropic interpolation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config file or a builtin config.
    Run {
        config: String,
        /// Skip failed cases and write the remaining artifacts.
        #[arg(long)]
        keep_going: bool,
        /// Worker threads (0 = auto).
        #[arg(long, default_value_t = 0)]
        threads: usize,
        /// Write every artifact into this directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// List builtin configs.
    List,
    /// Print a builtin config as JSON.
    Show { name: String },
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            for name in BUILTIN_NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::Show { name } => match builtin(&name) {
            Some(config) => {
                println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("unknown builtin {name}");
                ExitCode::from(1)
            }
        },
        Command::Run { config, keep_going, threads, out_dir } => {
            let opts = RunOptions { keep_going, threads, out_dir };
            let outcome = resolve_config(&config).and_then(|c| run(&c, &opts));
            match outcome {
                Ok(report) => {
                    for case in report.summary.cases.iter().filter(|c| !c.ok) {
                        eprintln!("T = {}: {}", case.horizon, case.error.as_deref().unwrap_or("failed"));
                    }
                    if let Some(failed) = report.summary.results.get("failed").and_then(|f| f.as_array()) {
                        if !failed.is_empty() {
                            eprintln!("{} bound reports failed", failed.len());
                        }
                    }
                    println!("{}: wrote {} tables", report.summary.name, report.tables.len());
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
