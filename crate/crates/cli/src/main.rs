//! `protoaudio` command-line pipeline: preprocess audio into embeddings,
//! train prototypes, evaluate, and inspect what the prototypes learned.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Run;

#[derive(Parser)]
#[command(name = "protoaudio", version, about = "Interpretable prototype classifier for multi-label audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// JSONL manifest of recordings or stored embeddings.
    #[arg(long)]
    manifest: PathBuf,
    /// Run directory for every output.
    #[arg(long)]
    out: PathBuf,
    /// Overrides every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Segment audio, compute log-mel spectrograms and store backbone embeddings.
    Preprocess(#[command(flatten)] Common),
    /// Train prototypes and the class head.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the optimizer state in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score the test split and write a metrics report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Newline-separated classes to score.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Find the nearest training clips of every prototype and render them.
    Project {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Exemplars per prototype.
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Explain predictions by their strongest prototype contributions.
    Explain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        top_m: usize,
        /// Clip ids to explain; every test clip when omitted.
        ids: Vec<String>,
    },
    /// Resynthesize the boxed region of each projected exemplar as audio.
    RenderAudio {
        #[command(flatten)]
        common: Common,
        /// Only exemplars ranked below this.
        #[arg(long)]
        k: Option<usize>,
    },
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    let open = |c: &Common| Run::open(&c.config, &c.manifest, &c.out, c.seed);
    match cmd {
        Command::Preprocess(c) => commands::preprocess(&open(&c)?),
        Command::Train { common, resume } => commands::train(&open(&common)?, resume),
        Command::Eval {
            common,
            checkpoint,
            mask,
        } => commands::eval(&open(&common)?, checkpoint.as_deref(), mask.as_deref()),
        Command::Project { common, checkpoint, k } => commands::project_cmd(&open(&common)?, checkpoint.as_deref(), k),
        Command::Explain {
            common,
            checkpoint,
            top_m,
            ids,
        } => commands::explain_cmd(&open(&common)?, checkpoint.as_deref(), top_m, &ids),
        Command::RenderAudio { common, k } => commands::render_audio(&open(&common)?, k),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 2 } else { 0 });
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
