//! `fgmdm` command-line driver.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, Profile, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "fgmdm",
    version,
    about = "Part-conditioned motion diffusion toolkit"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML or JSON config file (a command manifest also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    /// Seed for the command's random stream.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training steps.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    #[arg(long, global = true)]
    pub guidance_scale: Option<f64>,
    /// Use the lexicon paraphraser instead of the endpoint.
    #[arg(long, global = true, conflicts_with = "online")]
    pub offline: bool,
    /// Use the chat-completion endpoint (needs FGMDM_API_KEY).
    #[arg(long, global = true)]
    pub online: bool,
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic corpus operations.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Rewrite sentences as per-body-part descriptions (JSONL out).
    Paraphrase {
        /// Sentence to paraphrase; repeatable.
        #[arg(long)]
        text: Vec<String>,
        /// File with one sentence per line.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a denoiser; writes checkpoints, telemetry and a manifest.
    Train {
        /// Dataset JSONL; generated from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Generate motions from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Vague sentence, paraphrased before conditioning.
        #[arg(long, required_unless_present = "parts_file")]
        text: Option<String>,
        /// JSON object of per-part sentences; skips paraphrasing.
        #[arg(long, conflicts_with = "text")]
        parts_file: Option<PathBuf>,
        #[arg(long)]
        num_samples: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        /// Motion JSONL output.
        #[arg(long)]
        out: PathBuf,
    },
    /// FID, diversity and MM-Dist of generated motions.
    Evaluate {
        /// Corpus JSONL; the evaluator trains on its train split and the
        /// test split is the reference.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        /// Report lines are appended here.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one BVH file per motion in a JSONL file.
    ExportBvh {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train part-token and global-only models on identical budgets and compare.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

/// Effective configuration: profile, file, then flags.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let g = &cli.global;
    let mut cfg = RunConfig::load(g.config.as_deref(), g.profile)?;
    if let Some(seed) = g.seed {
        match &cli.command {
            Command::Dataset { .. } => cfg.dataset.seed = seed,
            Command::Train { .. } | Command::Ablate { .. } => cfg.training.seed = seed,
            Command::Sample { .. } => cfg.sampling.seed = seed,
            Command::Evaluate { .. } => cfg.evaluation.seed = seed,
            Command::Paraphrase { .. } | Command::ExportBvh { .. } => {}
        }
    }
    if let Some(steps) = g.steps {
        cfg.training.steps = steps;
    }
    if let Some(s) = g.guidance_scale {
        cfg.diffusion.guidance_scale = s;
    }
    if g.offline {
        cfg.paraphrase.offline = true;
    }
    if g.online {
        cfg.paraphrase.offline = false;
    }
    if let Some(e) = &g.endpoint {
        cfg.paraphrase.client.endpoint = e.clone();
    }
    if let Some(m) = &g.model {
        cfg.paraphrase.client.model = m.clone();
    }
    if let Command::Sample {
        num_samples,
        frames,
        ..
    } = &cli.command
    {
        if let Some(n) = num_samples {
            cfg.sampling.num_samples = *n;
        }
        if let Some(f) = frames {
            cfg.sampling.frames = *f;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if cli.global.verbose {
        let _ = tracing_subscriber::fmt()
            .with_writer(std::io::stderr)
            .with_max_level(tracing::Level::INFO)
            .try_init();
    }
    let args: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let result = resolve_config(&cli)
        .map_err(CliError::from)
        .and_then(|cfg| commands::dispatch(&cli, &cfg, &args).map_err(CliError::from));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.exit_code() == 2 {
                eprintln!("\nRun `fgmdm --help` for usage.");
            }
            e.exit_code()
        }
    }
}
