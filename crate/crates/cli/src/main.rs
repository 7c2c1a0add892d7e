use bpu_cli::commands::{self, Common, ComplexityArgs};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Bounded low-rank adapter unlearning experiments.
#[derive(Debug, Parser)]
#[command(name = "bpu", version)]
struct Cli {
    /// JSON experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (run directory for `unlearn`, root for `sweep`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Suppress progress messages on stderr.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Finite-difference checks of every gradient path.
    Gradcheck,
    /// Pretrain, build the reference, unlearn, evaluate, write artifacts.
    Unlearn,
    /// One run per cell of `sweep.params` x `sweep.seeds`, plus index.csv.
    Sweep,
    /// Operation and parameter counts for an adapted k x d layer.
    Complexity {
        #[arg(long, default_value_t = 4096)]
        d: u64,
        #[arg(long, default_value_t = 11008)]
        k: u64,
        #[arg(long, value_delimiter = ',', default_values_t = [4u64, 8, 16, 32])]
        ranks: Vec<u64>,
        /// Sequence length for the attention comparison.
        #[arg(long, default_value_t = 512)]
        seq_len: u64,
        /// Also time a 256 x 256 sine adapter forward pass per rank.
        #[arg(long)]
        bench: bool,
    },
    /// Two-column plot data from a run directory's CSV files.
    Report { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let common = Common {
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        quiet: cli.quiet,
    };
    let result = match cli.command {
        Command::Gradcheck => commands::cmd_gradcheck(&common),
        Command::Unlearn => commands::cmd_unlearn(&common),
        Command::Sweep => commands::cmd_sweep(&common),
        Command::Complexity { d, k, ranks, seq_len, bench } => commands::cmd_complexity(
            &common,
            &ComplexityArgs {
                d,
                k,
                ranks,
                seq_len,
                bench,
            },
        ),
        Command::Report { run_dir } => commands::cmd_report(&common, &run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
