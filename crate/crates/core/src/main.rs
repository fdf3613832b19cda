use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use agmon_core::cli::{run_file, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "agmon-lab", version, about = "Sweeps for reverse-Agmon lower bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Debug-level logging.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment of a JSON config.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run only experiments of this kind.
        #[arg(long, value_parser = parse_kind)]
        only: Option<ExperimentKind>,
        #[arg(long)]
        seed: Option<u64>,
        /// Concurrent sweep points.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// List the model catalogue and experiment kinds.
    List,
}

fn parse_kind(s: &str) -> Result<ExperimentKind, String> {
    s.parse()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::List => {
            println!("models:");
            for m in agmon_core::models::known_models() {
                println!("  {m}");
            }
            println!("experiment kinds:");
            for k in ExperimentKind::ALL {
                println!("  {k}");
            }
            ExitCode::SUCCESS
        }
        Command::Run { config, out, only, seed, jobs } => {
            let opts = RunOptions { out, seed, jobs };
            match run_file(&config, only, &opts) {
                Ok(reports) => {
                    let mut failed = 0;
                    for r in &reports {
                        let bad = r.failed();
                        println!(
                            "{} {} ({}): {} records, {} verdicts, {} failed",
                            if bad.is_empty() { "PASS" } else { "FAIL" },
                            r.name,
                            r.kind,
                            r.records.len(),
                            r.verdict_count(),
                            bad.len()
                        );
                        for (rec, v) in bad {
                            println!("  {} {}: measured {} target {} margin {}", rec.key_string(), v.name, v.measured, v.target, v.margin);
                        }
                        failed += r.failed().len();
                    }
                    if failed == 0 {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
