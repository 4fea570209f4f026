//! `mrha`: corpus generation, training, evaluation, streaming and alerts.
//!
//! Exit status: 0 ok, 2 configuration or usage, 3 data or shape, 4 gateway.

mod commands;
mod data;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use mrha_core::skeleton::{ActivityClass, SplitMode};

#[derive(Parser)]
#[command(name = "mrha", version, about = "Skeleton activity recognition with SMS alerts")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SplitArg {
    CrossSubject,
    CrossView,
}

impl From<SplitArg> for SplitMode {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::CrossSubject => SplitMode::CrossSubject,
            SplitArg::CrossView => SplitMode::CrossView,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Test,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceKind {
    File,
    Socket,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(clap::Args)]
pub struct SplitOpts {
    /// Share of samples (by group) kept for training.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    /// Seed for the group shuffle; defaults to the training seed.
    #[arg(long)]
    pub split_seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus and its manifest.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sequence length in seconds.
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
        /// Restrict to these classes (codes such as A43).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<ActivityClass>,
    },
    /// Train from scratch on a corpus directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        split: SplitArg,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Corpus directory; defaults to paths.data_dir.
        #[arg(long)]
        data: Option<PathBuf>,
        /// History CSV; defaults to <paths.logs>/history.csv.
        #[arg(long)]
        history: Option<PathBuf>,
        #[command(flatten)]
        split_opts: SplitOpts,
    },
    /// Evaluate a checkpoint and write report files.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Without a split every sample is evaluated.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long, value_enum, default_value = "test")]
        subset: Subset,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report directory; defaults to paths.logs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        split_opts: SplitOpts,
    },
    /// Classify a live or replayed skeleton stream and raise alerts.
    Stream {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        source: SourceKind,
        /// JSONL file for --source file.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Address for --source socket.
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        #[arg(long, value_enum, default_value = "off")]
        alerts: Switch,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Unix time of stream timestamp 0; defaults to now.
        #[arg(long)]
        start_time: Option<f64>,
        /// Replay a file at its recorded speed.
        #[arg(long)]
        pace: bool,
    },
    /// Send one fixed-template alert to every configured recipient.
    SendTestAlert {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the in-repo SMS gateway mock and print each request it receives.
    MockGateway {
        #[arg(long, default_value = "127.0.0.1:8089")]
        listen: String,
        /// Status codes for the first requests, e.g. 500,500; then 201.
        #[arg(long, value_delimiter = ',')]
        script: Vec<u16>,
    },
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("MRHA_LOG").init();

    let result = match cli.command {
        Command::GenData { out, per_class, seed, duration, classes } => {
            commands::gen_data(&out, per_class, seed, duration, &classes)
        }
        Command::Train { config, split, checkpoint, data, history, split_opts } => {
            commands::train(&config, split.into(), &checkpoint, data.as_deref(), history.as_deref(), &split_opts)
        }
        Command::Eval { checkpoint, data, split, subset, config, out, split_opts } => commands::eval(
            &checkpoint,
            &data,
            split.map(Into::into),
            subset,
            config.as_deref(),
            out.as_deref(),
            &split_opts,
        ),
        Command::Stream { checkpoint, source, input, listen, alerts, config, start_time, pace } => commands::stream(
            &checkpoint,
            source,
            input.as_deref(),
            &listen,
            alerts == Switch::On,
            config.as_deref(),
            start_time,
            pace,
        ),
        Command::SendTestAlert { config } => commands::send_test_alert(&config),
        Command::MockGateway { listen, script } => commands::mock_gateway(&listen, script),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
