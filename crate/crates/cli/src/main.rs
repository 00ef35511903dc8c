mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "strata", version, about = "Unit-pattern and activity recognition over IMU streams")]
struct Cli {
    /// Directory holding the activity timeline store.
    #[arg(long, global = true, default_value = ".strata")]
    state_dir: PathBuf,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a labeled synthetic frame CSV.
    Synth(SynthArgs),
    /// Train a snapshot from a labeled frame CSV, a feature CSV or a registry directory.
    Train(TrainArgs),
    /// Score a snapshot against labeled data.
    Eval(EvalArgs),
    /// Run a recorded stream through a snapshot, printing protocol messages as NDJSON.
    Replay(ReplayArgs),
    /// Run a session and serve its protocol over TCP.
    Serve(ServeArgs),
    /// Write the minute-resolution activity timeline as CSV.
    Timeline(TimelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus JSON (pattern profiles and activity compositions); the built-in starter corpus when omitted.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long)]
    seconds: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Override the seconds each pattern is performed alone before activity blocks.
    #[arg(long)]
    warmup: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Cross-validation folds for the report; 0 skips it.
    #[arg(long, default_value_t = 4)]
    folds: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    snapshot: PathBuf,
    #[arg(long, default_value_t = 4)]
    folds: usize,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    file: PathBuf,
    #[arg(long)]
    snapshot: PathBuf,
    /// Pace frames at 20 Hz.
    #[arg(long)]
    realtime: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    listen: String,
    #[arg(long)]
    snapshot: PathBuf,
    /// Replay this frame CSV instead of synthesizing.
    #[arg(long, conflicts_with = "live")]
    replay: Option<PathBuf>,
    /// Read NDJSON frames from this TCP address instead of synthesizing.
    #[arg(long)]
    live: Option<String>,
    /// Corpus JSON for the synthetic source.
    #[arg(long)]
    profiles: Option<PathBuf>,
    #[arg(long, default_value_t = 3600.0)]
    seconds: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Registry directory; defaults to `<snapshot>.registry` when it exists.
    #[arg(long)]
    registry: Option<PathBuf>,
    /// Process frames as fast as possible instead of at 20 Hz.
    #[arg(long)]
    fast: bool,
    /// Start paused until a `resume` command.
    #[arg(long)]
    paused: bool,
}

#[derive(Args)]
struct TimelineArgs {
    /// Output CSV, or `-` for stdout.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Synth(a) => commands::synth(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Replay(a) => commands::replay(a, &cli.state_dir),
        Cmd::Serve(a) => commands::serve(a, &cli.state_dir),
        Cmd::Timeline(a) => commands::timeline(a, &cli.state_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 for bad arguments, 3 for training failures, 2 for everything else
/// (unreadable or malformed data).
fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<commands::Usage>().is_some() {
        return 1;
    }
    for cause in e.chain() {
        if let Some(se) = cause.downcast_ref::<strata_core::Error>() {
            return match se.root() {
                strata_core::Error::Training(_) => 3,
                _ => 2,
            };
        }
    }
    2
}
