use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use weightlab_cli::{builtins, run_and_write, Loaded, RunOptions};

#[derive(Parser)]
#[command(name = "weightlab", version, about = "Two-weight condition laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write its JSON report and CSV table.
    Run {
        scenario: PathBuf,
        /// Output directory (overrides the scenario's "output").
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        /// Grid level (overrides the scenario's "level").
        #[arg(long)]
        level: Option<u32>,
    },
    /// List kernels, measure families and gallery items.
    ListBuiltins,
}

fn seed_from_env() -> Result<Option<u64>, String> {
    match std::env::var("WEIGHTLAB_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| format!("WEIGHTLAB_SEED must be an unsigned integer, got {s:?}")),
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListBuiltins => {
            print!("{}", builtins::render_builtins());
            ExitCode::SUCCESS
        }
        Command::Run { scenario, out, threads, level } => {
            if let Some(n) = threads {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
            let seed = match seed_from_env() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let loaded = match Loaded::from_path(&scenario) {
                Ok(l) => l,
                Err(d) => {
                    eprintln!("{d}");
                    return ExitCode::from(2);
                }
            };
            match run_and_write(&loaded, &RunOptions { level, seed, out }) {
                Ok(w) => {
                    for r in &w.outcome.rows {
                        let mark = if r.pass { "pass" } else { "FAIL" };
                        println!("{mark}  {:<22} {}", r.check, weightlab_cli::run::format_num(r.constant));
                    }
                    println!("wrote {} and {}", w.json.display(), w.csv.display());
                    if w.outcome.pass {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
