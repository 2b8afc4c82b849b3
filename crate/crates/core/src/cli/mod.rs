//! The `contactcap` command-line tool.
//!
//! Exit codes: 0 on success, 1 when inputs or configuration are invalid,
//! 2 when a run fails at runtime. Failures are reported on standard error
//! as `key=value` lines.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use commands::Common;

#[derive(Debug, Parser)]
#[command(name = "contactcap", version, about = "Contact-aware human motion capture toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML configuration of the command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed overriding the configured one.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Energy weight override, e.g. `lambda_3d=0`; repeatable.
    #[arg(long = "weights-override", global = true, value_name = "KEY=VALUE", value_parser = parse_override)]
    weights_override: Vec<(String, f64)>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Generate a synthetic sequence, pressure stream and ground truth.
    Synth,
    /// Turn raw insole pressure into dense foot contact.
    Annotate,
    /// Fit shape, first pose and motion to RGBD and pressure observations.
    FitRgbdp,
    /// Refine per-frame estimates with predicted contact.
    Vp,
    /// Train the keypoint-to-contact network.
    TrainFpp,
    /// Predict dense contact from 2D keypoints.
    Predict,
    /// Score a fit against ground truth and export plot series.
    Evaluate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Annotate => "annotate",
            Command::FitRgbdp => "fit-rgbdp",
            Command::Vp => "vp",
            Command::TrainFpp => "train-fpp",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
        }
    }
}

fn parse_override(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|e| format!("value of `{}`: {e}", k.trim()))?;
    Ok((k.trim().to_string(), v))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let common = Common {
        seed: cli.seed,
        weights: cli.weights_override.clone(),
    };
    let cfg = cli.config.as_deref();
    let out = &cli.out;
    match cli.command {
        Command::Synth => commands::synth(&config::load(cfg)?, &common, out),
        Command::Annotate => commands::annotate(&config::load(cfg)?, &common, out),
        Command::FitRgbdp => commands::fit_rgbdp_cmd(&config::load(cfg)?, &common, out),
        Command::Vp => commands::vp(&config::load(cfg)?, &common, out),
        Command::TrainFpp => commands::train_fpp(&config::load(cfg)?, &common, out),
        Command::Predict => commands::predict(&config::load(cfg)?, &common, out),
        Command::Evaluate => commands::evaluate(&config::load(cfg)?, &common, out),
    }
}

fn quote(s: &str) -> String {
    format!("{:?}", s)
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidInput(_) => "invalid_input",
        Error::TopologyMismatch(_) => "topology_mismatch",
        Error::NonFinite(_) => "non_finite",
        Error::LengthMismatch { .. } => "length_mismatch",
        Error::NoLoad => "no_load",
        Error::InvalidWeight(_) => "invalid_weight",
        Error::SensorIndex { .. } => "sensor_index",
        Error::InvalidPrior(_) => "invalid_prior",
        Error::Format { .. } => "format",
        Error::Missing(_) => "missing",
        Error::Diverged(_) => "diverged",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

/// Runs the tool on `args` (program name first), writing diagnostics to
/// `stderr`, and returns the process exit code.
pub fn run<I, T>(args: I, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "status=error\nclass=validation\nkind=usage\nmessage={}", quote(first));
            return 1;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let (class, code) = if e.is_validation() {
                ("validation", 1)
            } else {
                ("runtime", 2)
            };
            let _ = writeln!(
                stderr,
                "status=error\nclass={class}\ncommand={}\nkind={}\nmessage={}",
                cli.command.name(),
                kind(&e),
                quote(&e.to_string())
            );
            code
        }
    }
}
