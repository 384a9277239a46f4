//! `printtrace` — printer attribution for scanned documents.
//!
//! The pipeline runs either as separate stages (`segment`, `extract`,
//! `pool`, `train`, `predict`), each exchanging files, or end to end
//! (`evaluate`). `synth` renders a labeled test corpus and `analyze`
//! inspects feature quality. Failures exit nonzero with a single-line
//! `error: ...` message on stderr.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};

use commands::Ctx;
use config::FileConfig;

#[derive(Debug, Parser)]
#[command(
    name = "printtrace",
    version,
    about = "Attributes scanned documents to their source printer via letter-level texture descriptors",
    after_help = config::schema_help()
)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Globals {
    /// Flat key=value config file; explicit flags override its entries
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed for corpus generation and train/test splitting
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads (default: all available cores)
    #[arg(long, global = true, value_name = "N", env = "PRINTTRACE_JOBS")]
    jobs: Option<usize>,
    /// Output path; a file or directory depending on the command
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Binarize pages and list their letter components as CSV
    Segment(commands::SegmentArgs),
    /// Extract one texture descriptor per letter into batch files
    Extract(commands::ExtractArgs),
    /// Average letter descriptors into per-block pooled features
    Pool(commands::PoolArgs),
    /// Build a reference bank from labeled pooled features
    Train(commands::TrainArgs),
    /// Attribute documents to printers with a reference bank
    Predict(commands::PredictArgs),
    /// Run train/test splits over a labeled corpus and write a report
    Evaluate(commands::EvaluateArgs),
    /// Render a deterministic synthetic corpus of printed pages
    Synth(commands::SynthArgs),
    /// Feature diagnostics: block correlations, pooling variance, LDA
    #[command(subcommand)]
    Analyze(commands::AnalyzeCmd),
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.globals.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };

    let jobs = cfg.resolve_opt(cli.globals.jobs, "jobs");
    if let Some(jobs) = jobs {
        if jobs == 0 {
            bail!("jobs: expected at least 1 worker thread");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }

    let ctx = Ctx {
        cfg,
        seed: cli.globals.seed,
        out: cli.globals.out.clone(),
    };
    match &cli.command {
        Command::Segment(args) => commands::segment(&ctx, args),
        Command::Extract(args) => commands::extract(&ctx, args),
        Command::Pool(args) => commands::pool(&ctx, args),
        Command::Train(args) => commands::train(&ctx, args),
        Command::Predict(args) => commands::predict(&ctx, args),
        Command::Evaluate(args) => commands::evaluate(&ctx, args),
        Command::Synth(args) => commands::synth(&ctx, args),
        Command::Analyze(cmd) => commands::analyze(&ctx, cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            // Usage errors squash to the first line; every failure mode of
            // this binary prints exactly one parsable `error: ...` line.
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid usage"));
            return ExitCode::from(2);
        }
        Err(help_or_version) => help_or_version.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Core errors render their full cause chain in Display, so the
            // top error alone is the complete single-line message.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
