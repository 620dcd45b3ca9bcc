//! `rgwvp`: wavelet rendering, reconstruction, scalograms, derivative and error-bound checks,
//! and VP network training from the command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure. Failures are
//! reported on stderr as a JSON object.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use rgw_vp::cwt::ScaleSpacing;
use rgw_vp::fit::FitMethod;
use rgw_vp::MotherKind;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "rgwvp", version, about = "Rational Gaussian wavelets and variable-projection networks")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw; overrides the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a mother wavelet on a symmetric grid (wavelet.csv, admissibility.json).
    Render(RenderArgs),
    /// Fit wavelet parameters to one signal (reconstruction.csv, reconstruction.json).
    Reconstruct(ReconstructArgs),
    /// Wavelet coefficient magnitudes over a scale x translation grid (scalogram.csv).
    Scalogram(ScalogramArgs),
    /// Compare analytic derivatives with finite differences (gradcheck.json).
    Gradcheck(GradcheckArgs),
    /// Evaluate the coefficient error bound on smooth bumps (boundcheck.csv).
    Boundcheck(BoundcheckArgs),
    /// Train a VP network (model.json, history.csv).
    Train(TrainArgs),
    /// Score a trained model on a test set (metrics.json).
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub mother: Option<MotherKind>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Plain numeric samples or a heartbeat CSV.
    #[arg(long, value_name = "PATH")]
    pub signal: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<usize>,
    #[arg(long)]
    pub mother: Option<MotherKind>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub method: Option<FitMethod>,
    /// Skip the paired frozen-Ricker fit.
    #[arg(long)]
    pub no_compare: bool,
}

#[derive(Debug, Args)]
pub struct ScalogramArgs {
    #[arg(long, value_name = "PATH")]
    pub signal: Option<PathBuf>,
    #[arg(long)]
    pub record: Option<usize>,
    #[arg(long)]
    pub mother: Option<MotherKind>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long, value_parser = parse_spacing)]
    pub spacing: Option<ScaleSpacing>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BoundcheckArgs {
    #[arg(long)]
    pub signals: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub signal_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Heartbeat CSV; synthetic beats when absent.
    #[arg(long, value_name = "PATH")]
    pub train_data: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mother: Option<MotherKind>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: Option<PathBuf>,
    /// Heartbeat CSV; synthetic beats when absent.
    #[arg(long, value_name = "PATH")]
    pub test_data: Option<PathBuf>,
}

fn parse_spacing(s: &str) -> Result<ScaleSpacing, String> {
    match s {
        "linear" => Ok(ScaleSpacing::Linear),
        "octave" => Ok(ScaleSpacing::Octave),
        other => Err(format!("unknown spacing `{other}` (linear, octave)")),
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub const USAGE: u8 = 2;
    pub const NUMERICAL: u8 = 3;

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: Self::USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: Self::NUMERICAL,
            kind: "numerical",
            message: message.into(),
        }
    }

    fn report(&self) {
        let body = json!({ "error": self.kind, "message": self.message, "exit_code": self.code });
        eprintln!("{body}");
    }
}

impl From<rgw_vp::Error> for CliError {
    fn from(e: rgw_vp::Error) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::usage(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            CliError::usage(e.to_string().trim_end()).report();
            return ExitCode::from(CliError::USAGE);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            e.report();
            ExitCode::from(e.code)
        }
    }
}
