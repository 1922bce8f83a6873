use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dop_cli::runner::{run_command, RunOptions, EXIT_FAILURE, EXIT_OK};
use dop_cli::suites::{run_suite, Suite};

#[derive(Parser)]
#[command(name = "dop", version, about = "Decomposed off-policy multi-agent policy gradients")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a JSON config and write one CSV per seed.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Run an acceptance suite and print a pass/fail table.
    Accept {
        #[arg(value_enum)]
        suite: Suite,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Run { config, out, parallel, seed_offset } => run_command(&config, &RunOptions { out, parallel, seed_offset }),
        Command::Accept { suite } => {
            let checks = run_suite(suite, |c| println!("{c}"));
            let passed = checks.iter().filter(|c| c.pass).count();
            println!("{passed}/{} criteria passed", checks.len());
            if passed == checks.len() {
                EXIT_OK
            } else {
                EXIT_FAILURE
            }
        }
    };
    ExitCode::from(code as u8)
}
