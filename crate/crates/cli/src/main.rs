//! Batch front end for the disentangling speech-feature quantizer.
//!
//! Subcommands cover the full workflow: synthetic corpus generation,
//! codebook and pipeline fitting, encode/decode to the bitstream container,
//! code-domain manipulation, evaluation, and stream inspection.
//!
//! Exit codes: 0 success, 2 usage errors, 3 unparseable or corrupt files,
//! 4 incompatible artifacts (wrong pipeline for a stream), 5 numeric
//! infeasibility. Every failure prints one machine-parsable line
//! `error[TAG]: message` on stderr. Output files are written to a
//! temporary and renamed into place, so failures leave no partial output.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsq_core::Error;

#[derive(Parser)]
#[command(
    name = "dsq",
    version,
    about = "Disentangling speech-feature quantizer"
)]
struct Cli {
    /// Base seed for fitting and generation; DSQ_SEED overrides the
    /// default of 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature corpus with ground-truth labels.
    Synth {
        /// TOML spec of corpus shape and generator parameters.
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for .ftr files and labels.jsonl.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the content codebook and the quantizer pipeline.
    Fit {
        /// TOML config (preset plus overrides).
        #[arg(long)]
        config: PathBuf,
        /// Directory of training .ftr files.
        #[arg(long)]
        train: PathBuf,
        /// Output pipeline archive (.dsqp).
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a feature file into a bitstream.
    Encode {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode a bitstream back to a feature file.
    Decode {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replace the speaker stream of one bitstream with another's.
    SwapSpeaker {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold one frame's prosody codes over a suffix of the utterance.
    FlattenProsody {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First affected frame (index or `mid`).
        #[arg(long, default_value = "mid")]
        from: String,
        /// Frame whose codes are held (index or `mid`); defaults to
        /// `--from`.
        #[arg(long)]
        hold: Option<String>,
    },
    /// Evaluate a pipeline on a labeled corpus directory.
    Eval {
        #[arg(long)]
        pipeline: PathBuf,
        /// Corpus directory (.ftr files + labels.jsonl).
        #[arg(long)]
        dir: PathBuf,
        /// JSON report path (default: <dir>/eval_report.json).
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Inspect a bitstream header and its bit accounting.
    Info {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn error_tag(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) | Error::FrameOutOfRange { .. } => "E_USAGE",
        Error::Infeasible(_) | Error::UndefinedCorrelation(_) => "E_INFEASIBLE",
        Error::IncompatibleCodebook { .. }
        | Error::ConfigMismatch(_)
        | Error::ShapeMismatch { .. }
        | Error::IndexOutOfRange { .. }
        | Error::Unfitted(_) => "E_INCOMPAT",
        _ => "E_PARSE",
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match error_tag(e) {
        "E_USAGE" => 2,
        "E_PARSE" => 3,
        "E_INCOMPAT" => 4,
        "E_INFEASIBLE" => 5,
        _ => 1,
    }
}

fn main() -> ExitCode {
    // Dying quietly on a closed pipe (dsq ... | head) beats a panic from a
    // failed println.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let seed = cli
        .seed
        .or_else(|| std::env::var("DSQ_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0);
    let result = match &cli.command {
        Command::Synth { spec, out } => commands::synth(spec, out, seed),
        Command::Fit { config, train, out } => commands::fit(config, train, out, seed),
        Command::Encode {
            pipeline,
            input,
            out,
        } => commands::encode(pipeline, input, out),
        Command::Decode {
            pipeline,
            input,
            out,
        } => commands::decode(pipeline, input, out),
        Command::SwapSpeaker {
            pipeline,
            src,
            reference,
            out,
        } => commands::swap(pipeline, src, reference, out),
        Command::FlattenProsody {
            pipeline,
            input,
            out,
            from,
            hold,
        } => commands::flatten(pipeline, input, out, from, hold.as_deref()),
        Command::Eval {
            pipeline,
            dir,
            json,
        } => commands::eval(pipeline, dir, json.as_deref()),
        Command::Info { input } => commands::info(input),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", error_tag(&e));
            ExitCode::from(exit_code_for(&e))
        }
    }
}
