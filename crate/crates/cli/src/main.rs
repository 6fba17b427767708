//! `drumscribe` command-line entry point.

mod config;
mod data;
mod infer;
mod listen;
mod serve;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{ConfigFile, UserError};

#[derive(Parser)]
#[command(name = "drumscribe", version, about = "Drum transcription toolkit")]
struct Cli {
    /// TOML file with one table per subcommand; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build, validate or synthesise a corpus manifest.
    Manifest(data::ManifestArgs),
    /// Write frame label rolls (and optionally log-mel features) for a manifest.
    Labels(data::LabelsArgs),
    /// Build a shuffled-mixup chunk pool from the training split.
    Augment(data::AugmentArgs),
    /// Train the onset/velocity model.
    Train(train::TrainArgs),
    /// Transcribe a WAV file to a General MIDI drum file.
    Transcribe(infer::TranscribeArgs),
    /// Score estimated MIDI files against references.
    Eval(infer::EvalArgs),
    /// Compare training on unmodified, mixup and shuffled-mixup data.
    Ablation(train::AblationArgs),
    /// Build a pairwise listening study from per-arm renderings.
    StudyBuild(listen::StudyBuildArgs),
    /// Serve a listening study over HTTP.
    Serve(serve::ServeArgs),
    /// Analyse a rating log.
    Stats(listen::StatsArgs),
}

impl Command {
    fn stage(&self) -> &'static str {
        match self {
            Command::Manifest(_) => "manifest",
            Command::Labels(_) => "labels",
            Command::Augment(_) => "augment",
            Command::Train(_) => "train",
            Command::Transcribe(_) => "transcribe",
            Command::Eval(_) => "eval",
            Command::Ablation(_) => "ablation",
            Command::StudyBuild(_) => "study-build",
            Command::Serve(_) => "serve",
            Command::Stats(_) => "stats",
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    match cli.command {
        Command::Manifest(a) => data::manifest(a, &file),
        Command::Labels(a) => data::labels(a, &file),
        Command::Augment(a) => data::augment(a, &file),
        Command::Train(a) => train::train(a, &file),
        Command::Transcribe(a) => infer::transcribe(a, &file),
        Command::Eval(a) => infer::eval(a, &file),
        Command::Ablation(a) => train::ablation(a, &file),
        Command::StudyBuild(a) => listen::study_build(a, &file),
        Command::Serve(a) => serve::serve(a, &file),
        Command::Stats(a) => listen::stats(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log).format_timestamp_millis().init();
    let stage = cli.command.stage();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{stage}]: {e:#}");
            if e.chain().any(|c| c.is::<UserError>()) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
