//! Command-line front end: `convert`, `evaluate` and `remap`.
//!
//! Reports are flat `key: value` lines on stdout. Exit status is 0 on
//! success, 1 for invalid input (arguments, files, parameters) and 2 for
//! numerical failures.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::convert::{convert_with, ConvertOptions};
use crate::error::{Error, Result};
use crate::eval::{distortion_rmse, model_parameter_error, psnr_masked, remap, reprojection_stats, ssim_masked};
use crate::io::{load_model, load_raster, model_to_yaml, save_raster};
use crate::lm::LmOptions;
use crate::model::ModelKind;
use crate::sampler::{sample_grid, DEFAULT_SAMPLES};

#[derive(Debug, Parser)]
#[command(name = "fisheye-convert", version, about = "Convert parameters between fisheye camera models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model of another family to an input model.
    Convert(ConvertArgs),
    /// Reprojection and parameter error of a candidate model.
    Evaluate(EvaluateArgs),
    /// Recover an image as seen through another model.
    Remap(RemapArgs),
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    /// ucm, eucm, ds, kb, occ, rt or woodscape.
    #[arg(long)]
    target: ModelKind,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    /// Only fit samples within this angle of the optical axis.
    #[arg(long, value_name = "DEGREES")]
    max_incidence: Option<f64>,
    /// Also write the report to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Overwrite existing output files.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    candidate: PathBuf,
    /// Ground-truth model of the candidate's family.
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
}

#[derive(Debug, Args)]
struct RemapArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    from: PathBuf,
    #[arg(long)]
    to: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Report PSNR and SSIM against the source image.
    #[arg(long)]
    metrics: bool,
    #[arg(long)]
    force: bool,
}

/// Exit status for an error: numerical failures are 2, everything else 1.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NoConvergence(_)
        | Error::SingularJacobian
        | Error::RankDeficient { .. }
        | Error::TooFewValidSamples { .. }
        | Error::AllSamplesInvalid
        | Error::NumericalFailure(_)
        | Error::NonFinite
        | Error::OutOfDomain => 2,
        Error::Validation(_)
        | Error::DimensionMismatch(_)
        | Error::Parse { .. }
        | Error::UnsupportedFormat(_)
        | Error::MalformedHeader(_)
        | Error::Io(_) => 1,
    }
}

/// Runs the command line `args` (including the program name) and returns the
/// process exit status.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let result = match cli.command {
        Command::Convert(args) => run_convert(&args),
        Command::Evaluate(args) => run_evaluate(&args),
        Command::Remap(args) => run_remap(&args),
    };
    match result {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            exit_code(&err)
        }
    }
}

fn check_writable(path: &Path, force: bool) -> Result<()> {
    if !force && path.exists() {
        return Err(Error::Validation(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn line(out: &mut String, key: &str, value: impl std::fmt::Display) {
    let _ = writeln!(out, "{key}: {value}");
}

fn fmt_db(db: f64) -> String {
    if db.is_infinite() {
        "inf".into()
    } else {
        db.to_string()
    }
}

fn run_convert(args: &ConvertArgs) -> Result<String> {
    check_writable(&args.output, args.force)?;
    if let Some(report) = &args.report {
        check_writable(report, args.force)?;
    }
    let max_incidence = match args.max_incidence {
        Some(deg) if !(deg > 0.0 && deg.is_finite()) => {
            return Err(Error::Validation("--max-incidence must be positive".into()))
        }
        other => other.map(f64::to_radians),
    };
    let input = load_model(&args.input)?;
    let opts = ConvertOptions {
        samples: args.samples,
        lm: LmOptions {
            max_iters: args.max_iters,
            ..LmOptions::default()
        },
        max_incidence,
        ..ConvertOptions::default()
    };
    opts.lm.validate()?;
    let (output, report) = convert_with(&input, args.target, &opts)?;
    fs::write(&args.output, model_to_yaml(&output))?;

    let mut out = String::new();
    line(&mut out, "n", report.requested_n);
    line(&mut out, "accepted_n", report.accepted_n);
    line(&mut out, "iterations", report.iterations);
    line(&mut out, "rms_re_px", report.rms_reprojection_error);
    line(&mut out, "max_re_px", report.max_reprojection_error);
    line(&mut out, "wall_time_ms", report.wall_time_ms);
    line(&mut out, "status", report.status.as_str());
    line(&mut out, "coverage_loss", report.coverage_loss);
    if let Some(path) = &args.report {
        fs::write(path, &out)?;
    }
    Ok(out)
}

fn run_evaluate(args: &EvaluateArgs) -> Result<String> {
    let input = load_model(&args.input)?;
    let candidate = load_model(&args.candidate)?;
    let samples = sample_grid(&input, args.samples)?;
    let stats = reprojection_stats(&candidate, &samples.samples)?;

    let mut out = String::new();
    line(&mut out, "n", samples.requested_n);
    line(&mut out, "accepted_n", samples.accepted_n);
    line(&mut out, "rms_re_px", stats.rms);
    line(&mut out, "max_re_px", stats.max);
    if let Some(gt_path) = &args.gt {
        let gt = load_model(gt_path)?;
        line(&mut out, "pe", model_parameter_error(candidate.params(), gt.params())?);
        line(&mut out, "coeff_rmse", distortion_rmse(candidate.params(), gt.params())?);
    }
    Ok(out)
}

fn run_remap(args: &RemapArgs) -> Result<String> {
    check_writable(&args.output, args.force)?;
    let image = load_raster(&args.image)?;
    let from = load_model(&args.from)?;
    let to = load_model(&args.to)?;
    let recovered = remap(&image, &from, &to)?;
    save_raster(&recovered.image, &args.output)?;

    let mut out = String::new();
    line(&mut out, "invalid_px", recovered.invalid);
    if args.metrics {
        let psnr = psnr_masked(&image, &recovered.image, Some(&recovered.mask))?;
        let ssim = ssim_masked(&image, &recovered.image, Some(&recovered.mask))?;
        line(&mut out, "psnr_db", fmt_db(psnr));
        line(&mut out, "ssim", ssim);
    }
    Ok(out)
}
