//! Command-line driver: `lxtts <stage> [flags]`.
//!
//! Exit codes: 0 on success, 1 when a stage fails, 2 for bad usage
//! (unknown flags or subcommands, unreadable or invalid config files).

pub mod config;
pub mod report;
pub mod stages;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use config::{Precision, RunConfig};
use report::Format;
use stages::{RunDir, StageArgs};

pub const EXIT_OK: i32 = 0;
pub const EXIT_STAGE_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "lxtts", version, about = "Three-stage token TTS training in a synthetic world")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides `seed` in the config).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Run directory for all inputs and outputs.
    #[arg(long, global = true, value_name = "DIR", default_value = "run")]
    out: PathBuf,
    /// Input file overriding the stage's default input in the run directory.
    #[arg(long = "in", global = true, value_name = "PATH")]
    input: Option<PathBuf>,
    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = FormatArg::Markdown)]
    format: FormatArg,
    /// Step count for the training stage being run.
    #[arg(long = "stage-steps", global = true, value_name = "N")]
    stage_steps: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Markdown,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the world description and the raw corpus.
    WorldGen,
    /// Keep corpus rows that pass the quality thresholds.
    Filter,
    /// Next-token pre-training without speaker conditioning.
    Pretrain,
    /// Voice-cloning fine-tuning on same-speaker triplets.
    Sft,
    /// Sample, score, label, and balance preference pairs.
    PrefsBuild,
    /// DPO against the frozen SFT model.
    Dpo,
    /// Cross-lingual evaluation on held-out speakers.
    Eval,
    /// Summary tables from the evaluation results.
    Report,
}

fn run_stage(command: Command, args: &StageArgs) -> lxtts::Result<()> {
    macro_rules! typed {
        ($f:ident) => {
            match args.config.precision {
                Precision::F32 => stages::$f::<f32>(args),
                Precision::F64 => stages::$f::<f64>(args),
            }
        };
    }
    match command {
        Command::WorldGen => stages::world_gen(args),
        Command::Filter => stages::filter(args),
        Command::Pretrain => typed!(pretrain),
        Command::Sft => typed!(sft),
        Command::PrefsBuild => typed!(prefs_build),
        Command::Dpo => typed!(dpo),
        Command::Eval => typed!(eval),
        Command::Report => stages::report(args),
    }
}

/// Parses `argv` (program name first), runs the stage, and returns the
/// process exit code. Messages go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut config = match &cli.config {
        Some(path) => match RunConfig::load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_USAGE;
            }
        },
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let args = StageArgs {
        config,
        dir: RunDir::new(&cli.out),
        input: cli.input.clone(),
        stage_steps: cli.stage_steps,
        format: match cli.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Markdown => Format::Markdown,
        },
    };
    match run_stage(cli.command, &args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_STAGE_FAILURE
        }
    }
}
