//! Batch front end for the tilt-rectify toolkit: synthesize tilted scenes,
//! build reference distributions, optimize principle directions, rectify,
//! evaluate, refine plane annotations, and audit gradients.
//!
//! Exit codes: 0 success, 1 numeric-audit failure, 2 input/usage error,
//! 3 optimizer abort.

mod commands;
mod manifest;
mod util;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable/malformed inputs (exit 2).
    Usage(String),
    /// Filesystem/serialization failure (exit 2).
    Io(String),
    /// The optimizer aborted (exit 3).
    OptimizerAbort(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => 2,
            CliError::OptimizerAbort(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
            CliError::OptimizerAbort(m) => write!(f, "optimizer abort: {m}"),
        }
    }
}

impl From<tilt_rectify::io::IoFormatError> for CliError {
    fn from(e: tilt_rectify::io::IoFormatError) -> Self {
        CliError::Io(e.to_string())
    }
}

#[derive(Parser)]
#[command(
    name = "tilt-rectify",
    version,
    about = "Spatial rectification toolkit for tilted-camera imagery",
    after_help = "The TILT_RECTIFY_THREADS environment variable caps worker threads (0 = auto)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize tilted samples from a procedural box-room scene.
    Synth(commands::synth::SynthArgs),
    /// Build a reference slant/tilt histogram from normal maps.
    BuildQ(commands::build_q::BuildQArgs),
    /// Optimize the principle direction for one image.
    OptimizeE(commands::optimize_e::OptimizeEArgs),
    /// Warp an image and its normal map into the rectified frame.
    Rectify(commands::rectify::RectifyArgs),
    /// Evaluate predicted normal maps against ground truth.
    Eval(commands::eval::EvalArgs),
    /// Refine plane-instance masks by RANSAC and region growing.
    RefinePlanes(commands::refine_planes::RefinePlanesArgs),
    /// Audit every analytic gradient against finite differences.
    Gradcheck(commands::gradcheck::GradcheckArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => commands::synth::run(args),
        Command::BuildQ(args) => commands::build_q::run(args),
        Command::OptimizeE(args) => commands::optimize_e::run(args),
        Command::Rectify(args) => commands::rectify::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::RefinePlanes(args) => commands::refine_planes::run(args),
        Command::Gradcheck(args) => return commands::gradcheck::run(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
