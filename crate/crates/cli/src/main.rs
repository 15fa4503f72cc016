mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};

/// Learned-filterbank speaker verification toolkit.
///
/// Every subcommand accepts `--config FILE` with `key=value` lines: `seed`
/// and `threads` apply everywhere, `<subcommand>.<flag>` keys apply to one
/// subcommand. Flags given on the command line override the file. Logging is
/// controlled by DEEPVOX_LOG (error, info or debug).
#[derive(Parser, Debug)]
#[command(name = "deepvox", version, args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// Master seed; every random choice derives from it
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Worker threads; 1 gives a fully serial reference run
    #[arg(long, default_value_t = default_threads())]
    pub threads: usize,
    /// key=value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

fn default_threads() -> usize {
    deepvox::ndcore::par::available_threads()
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a corpus of WAV files plus manifest.txt
    Synth(commands::SynthArgs),
    /// Mix noise into every file of a manifest at a target SNR
    Degrade(commands::DegradeArgs),
    /// Run identification pretraining and verification training
    Train(commands::TrainArgs),
    /// Write filterbank features (and optionally embeddings) per frame
    Extract(commands::ExtractArgs),
    /// Score a trial list with a trained model
    Score(commands::ScoreArgs),
    /// Compute verification metrics from scored trials
    Eval(commands::EvalArgs),
    /// Guided-backprop relevance, PSD and pitch for one frame
    Ablate(commands::AblateArgs),
    /// Effective filterbank taps and per-layer frequency responses
    Fbank(commands::FbankArgs),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Synth(a) => &a.common,
            Command::Degrade(a) => &a.common,
            Command::Train(a) => &a.common,
            Command::Extract(a) => &a.common,
            Command::Score(a) => &a.common,
            Command::Eval(a) => &a.common,
            Command::Ablate(a) => &a.common,
            Command::Fbank(a) => &a.common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Degrade(_) => "degrade",
            Command::Train(_) => "train",
            Command::Extract(_) => "extract",
            Command::Score(_) => "score",
            Command::Eval(_) => "eval",
            Command::Ablate(_) => "ablate",
            Command::Fbank(_) => "fbank",
        }
    }
}

const USAGE: u8 = 1;
const DATA: u8 = 2;

fn parse(argv: &[OsString]) -> Result<Cli, ExitCode> {
    let report = |e: clap::Error| {
        let _ = e.print();
        if e.use_stderr() {
            ExitCode::from(USAGE)
        } else {
            ExitCode::SUCCESS
        }
    };
    let cli = Cli::try_parse_from(argv).map_err(report)?;
    let Some(path) = cli.command.common().config.clone() else {
        return Ok(cli);
    };
    let extra = config::file_args(&Cli::command(), cli.command.name(), &path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(USAGE)
    })?;
    // argv[1] is always the subcommand: there are no top-level options
    let merged: Vec<OsString> = argv[..2]
        .iter()
        .cloned()
        .chain(extra)
        .chain(argv[2..].iter().cloned())
        .collect();
    Cli::try_parse_from(merged).map_err(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DEEPVOX_LOG", "info"))
        .format_timestamp(None)
        .init();
    let argv: Vec<OsString> = std::env::args_os().collect();
    let cli = match parse(&argv) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let threads = cli.command.common().threads.max(1);
    if let Err(e) = deepvox::ndcore::par::configure_threads(threads) {
        log::warn!("could not size the worker pool: {e}");
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(DATA)
        }
    }
}
