//! Command-line front end: seeded data generation, federated training,
//! inference, transcript auditing and scalability analysis.
//!
//! Exit codes: 0 on success, 1 when a run or audit fails, 2 on
//! configuration or usage errors.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "fedforest", version, about = "Privacy-preserving federated random forest simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the run seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override dp.enabled.
    #[arg(long, value_parser = ["on", "off"])]
    dp: Option<String>,
    /// Override the number of banks.
    #[arg(long)]
    banks: Option<u32>,
    /// Enable broadcast fallback for unroutable accounts.
    #[arg(long)]
    broadcast_fallback: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate seeded synthetic data files.
    Gen {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the federated model and write a model directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Directory holding transactions.csv and accounts_bank<j>.csv.
        #[arg(long)]
        data: PathBuf,
        /// Model output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run federated inference over a transaction file.
    Infer {
        #[command(flatten)]
        config: ConfigArgs,
        /// Model directory produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Directory holding the banks' accounts_bank<j>.csv tables.
        #[arg(long)]
        data: PathBuf,
        /// Transactions to label.
        #[arg(long)]
        transactions: PathBuf,
        /// Predictions CSV destination.
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a transcript for leakage-rule violations.
    Audit {
        /// transcript.jsonl from a model directory.
        transcript: PathBuf,
        /// Second transcript; their bank/aggregator view shapes must match.
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Red-leaf expectation table and HE cost model.
    Analyze {
        /// PNS condition pool size.
        #[arg(long, default_value_t = 10)]
        cs: u64,
        /// Bank condition pool size.
        #[arg(long, default_value_t = 2)]
        cb: u64,
        /// Tree height.
        #[arg(long, default_value_t = 6)]
        height: u32,
        /// Number of trees.
        #[arg(long, default_value_t = 12)]
        tau: u32,
        /// Monte Carlo trials (0 disables the empirical column).
        #[arg(long, default_value_t = 10_000)]
        trials: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Accounts per bank for the cost model.
        #[arg(long, default_value_t = 100_000)]
        accounts: u64,
        /// Banks for the cost model.
        #[arg(long, default_value_t = 1)]
        banks: u64,
        /// Flag-domain size for the cost model.
        #[arg(long, default_value_t = 3)]
        flags: u64,
        /// Id code width in bits.
        #[arg(long, default_value_t = 16)]
        sigma: u64,
        /// Cuckoo hash functions.
        #[arg(long, default_value_t = 3)]
        hashes: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen { config, out } => commands::gen(&config, &out),
        Command::Train { config, data, out } => commands::train(&config, &data, &out),
        Command::Infer {
            config,
            model,
            data,
            transactions,
            out,
        } => commands::infer(&config, &model, &data, &transactions, &out),
        Command::Audit {
            transcript,
            compare,
        } => commands::audit(&transcript, compare.as_deref()),
        Command::Analyze {
            cs,
            cb,
            height,
            tau,
            trials,
            seed,
            accounts,
            banks,
            flags,
            sigma,
            hashes,
        } => commands::analyze(commands::AnalyzeParams {
            cs,
            cb,
            height,
            tau,
            trials,
            seed,
            accounts,
            banks,
            flags,
            sigma,
            hashes,
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
