use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use parametrix_cli::{run_scenario, Scenario};

/// Builds and verifies fundamental solutions described by a scenario file.
#[derive(Parser)]
#[command(name = "parametrix", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage of a scenario and write its report.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` or `out/<name>` next to the file.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replaces the master seed of the scenario.
        #[arg(long)]
        seed_override: Option<u64>,
        /// Caps the worker threads of every parallel stage.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the schema and field values without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

const CHECK_FAILED: u8 = 1;
const SCHEMA: u8 = 2;
const INTERNAL: u8 = 3;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => match Scenario::load(&config) {
            Ok(sc) => {
                println!("{}: valid {:?} scenario `{}`", config.display(), sc.kind, sc.name);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("schema error: {e}");
                ExitCode::from(SCHEMA)
            }
        },
        Command::Run { config, out, seed_override, threads } => {
            let mut sc = match Scenario::load(&config) {
                Ok(sc) => sc,
                Err(e) => {
                    eprintln!("schema error: {e}");
                    return ExitCode::from(SCHEMA);
                }
            };
            if let Some(seed) = seed_override {
                sc.seed = seed;
            }
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("internal error: cannot size the thread pool: {e}");
                    return ExitCode::from(INTERNAL);
                }
            }
            let dir = sc.output_dir(&config, out.as_deref());
            match run_scenario(&sc, &dir) {
                Ok(summary) => {
                    print!("{}", summary.text());
                    println!("report written to {}", dir.display());
                    match summary.first_failure() {
                        Some(c) => {
                            eprintln!("check failed: {}", c.name);
                            ExitCode::from(CHECK_FAILED)
                        }
                        None => ExitCode::SUCCESS,
                    }
                }
                Err(e) => {
                    eprintln!("internal error: {e}");
                    ExitCode::from(INTERNAL)
                }
            }
        }
    }
}
