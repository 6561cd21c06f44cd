//! Command-line front end. `main.rs` only calls [`main`].

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::calibrate::{fit_models, sample_calibrated, CalibrationConfig, GaussianClassModel};
use crate::error::{Error, Result};
use crate::experiment::{
    generate, read_generated, run_sweep, write_generated, write_sweep, ExperimentConfig, METADATA_FILE,
};
use crate::noisegen::{read_dataset_file, read_points_csv, write_labeled_csv, TrainingSet};
use crate::numkit::{column_means, coordinate_median, derived_stream};
use crate::robustmean::AgnosticMean;
use crate::suite::{run_suite, SuiteOptions};
use crate::trainer::{run_experiment, TrainConfig};
use crate::verify::write_purity_csv;

pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "noisecal", version, about = "Distribution calibration under instance-dependent label noise")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a scenario, corrupt labels, write train/val/test CSVs and metadata.json
    Generate(GenerateArgs),
    /// Robust, empirical and coordinate-median means of a points CSV
    Estimate(EstimateArgs),
    /// Fit per-class Gaussians to a labelled CSV and sample from them
    Calibrate(CalibrateArgs),
    /// Run correction + calibration training on generated data
    Train(TrainArgs),
    /// Run method × α × λ × seed and write per-cell reports plus aggregate.csv
    Sweep(SweepArgs),
    /// Run the oracle check suite
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Experiment config JSON
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (defaults to the config's output_dir)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    /// Points CSV, one point per row
    #[arg(long)]
    pub data: PathBuf,
    /// Result JSON; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Damping constant C
    #[arg(long)]
    pub damping: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// CalibrationConfig JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset CSV (`f0..,clean,noisy`); the noisy column is used
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for models.json and sampled.csv
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// TrainConfig JSON
    #[arg(long)]
    pub config: PathBuf,
    /// Training CSV written by `generate`
    #[arg(long)]
    pub data: PathBuf,
    /// Test CSV written by `generate`
    #[arg(long)]
    pub test: PathBuf,
    /// Report JSON; the final purity curve goes next to it as CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    pub seed: Option<u64>,
    /// metadata.json (defaults to the one beside --data)
    #[arg(long)]
    pub metadata: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Force all damping weights to 1 (mutation check)
    #[arg(long)]
    pub disable_damping: bool,
    /// Only run the named checks
    #[arg(long = "check")]
    pub checks: Vec<String>,
    /// Also write the table as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Why a command failed, mapped onto the exit code.
#[derive(Debug)]
pub enum Failure {
    Checks(usize),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

pub fn exit_code(failure: &Failure) -> u8 {
    match failure {
        Failure::Checks(_) => EXIT_CHECK_FAILED,
        Failure::Error(Error::Io(_)) => EXIT_IO,
        Failure::Error(Error::Csv(e)) if e.is_io_error() => EXIT_IO,
        Failure::Error(_) => EXIT_CONFIG,
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NOISECAL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Checks(n) => eprintln!("{n} check(s) failed"),
                Failure::Error(e) => eprintln!("error: {e}"),
            }
            ExitCode::from(exit_code(&f))
        }
    }
}

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Generate(a) => cmd_generate(a)?,
        Command::Estimate(a) => cmd_estimate(a)?,
        Command::Calibrate(a) => cmd_calibrate(a)?,
        Command::Train(a) => cmd_train(a)?,
        Command::Sweep(a) => cmd_sweep(a)?,
        Command::Verify(a) => return cmd_verify(a),
    }
    Ok(())
}

fn out_dir(flag: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn cmd_generate(a: GenerateArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let dir = out_dir(a.out, &config);
    let data = generate(&config, a.seed)?;
    write_generated(&dir, &data)?;
    println!(
        "wrote {} (train {}, val {}, test {}; noise rate {:.4})",
        dir.display(),
        data.metadata.n_train,
        data.metadata.n_val,
        data.metadata.n_test,
        data.metadata.achieved_noise_rate
    );
    Ok(())
}

#[derive(Serialize)]
struct Estimates {
    n: usize,
    d: usize,
    damping_constant: f64,
    robust: Vec<f64>,
    empirical: Vec<f64>,
    median: Vec<f64>,
}

fn cmd_estimate(a: EstimateArgs) -> Result<()> {
    let points = read_points_csv(fs::File::open(&a.data)?)?;
    let est = match a.damping {
        Some(c) if !(c > 0.0) => return Err(Error::Config(format!("--damping {c} must be > 0"))),
        Some(c) => AgnosticMean::with_constant(c),
        None => AgnosticMean::default(),
    };
    let out = Estimates {
        n: points.rows(),
        d: points.cols(),
        damping_constant: est.damping_constant,
        robust: est.estimate(&points)?,
        empirical: column_means(&points)?,
        median: coordinate_median(&points)?,
    };
    let text = serde_json::to_string_pretty(&out)?;
    match a.out {
        Some(p) => fs::write(p, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_calibrate(a: CalibrateArgs) -> Result<()> {
    let config: CalibrationConfig = read_json(&a.config)?;
    config.validate()?;
    let table = read_dataset_file(&a.data)?;
    let k = table.num_classes();
    let data = TrainingSet::new(table.features, table.noisy, k)?;
    let fitted = fit_models(&config, &data)?;
    if fitted.models.is_empty() {
        return Err(Error::invalid("no class has two or more samples"));
    }
    let sampled = sample_calibrated(&fitted.models, config.lambda, data.len(), &mut derived_stream(a.seed, 0))?;
    fs::create_dir_all(&a.out)?;
    let models: &[GaussianClassModel] = &fitted.models;
    fs::write(a.out.join("models.json"), serde_json::to_string_pretty(models)?)?;
    write_labeled_csv(fs::File::create(a.out.join("sampled.csv"))?, &sampled)?;
    println!("fitted {} classes, sampled {} points", models.len(), sampled.len());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut config: TrainConfig = read_json(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let meta = a.metadata.unwrap_or_else(|| a.data.with_file_name(METADATA_FILE));
    let data = read_generated(&a.data, &a.test, &meta)?;
    let evaluator = if data.val.is_empty() {
        crate::verify::Evaluator::new(data.metadata.oracle.clone(), data.test.clone(), data.train_clean.clone())?
    } else {
        data.evaluator()?
    };
    let (report, failure) = match run_experiment(&config, data.train, &evaluator) {
        Ok(out) => (out.report, None),
        Err(f) => (f.report, Some(f.error)),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&a.out, report.to_json()?)?;
    write_purity_csv(fs::File::create(a.out.with_extension("purity.csv"))?, report.final_purity_curve())?;
    if let Some(e) = failure {
        return Err(e);
    }
    let s = &report.summary;
    println!(
        "{}: agreement {:.4}, accuracy {:.4}, noise {:.4} -> {:.4}",
        report.variant, s.final_agreement, s.final_accuracy, s.initial_noise_rate, s.final_noise_rate
    );
    Ok(())
}

fn cmd_sweep(a: SweepArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config)?;
    let dir = out_dir(a.out, &config);
    let results = run_sweep(&config, a.jobs)?;
    write_sweep(&dir, &config.noise.label(), &results)?;
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    println!("{} cells, {} failed, written to {}", results.len(), failed, dir.display());
    Ok(())
}

fn cmd_verify(a: VerifyArgs) -> std::result::Result<(), Failure> {
    let opts = SuiteOptions {
        seed: a.seed,
        disable_damping: a.disable_damping,
    };
    let results = run_suite(&opts, &a.checks);
    if results.is_empty() {
        return Err(Error::Config(format!("no check matches {:?}", a.checks)).into());
    }
    for r in &results {
        println!("{r}");
    }
    if let Some(p) = a.out {
        fs::write(p, serde_json::to_string_pretty(&results).map_err(Error::from)?).map_err(Error::from)?;
    }
    match results.iter().filter(|r| !r.passed).count() {
        0 => Ok(()),
        n => Err(Failure::Checks(n)),
    }
}
