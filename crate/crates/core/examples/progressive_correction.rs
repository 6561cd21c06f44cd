//! One training run, epoch by epoch.
//!
//! cargo run --release --example progressive_correction -- [lambda] [seed]

use noisecal::calibrate::CalibrationConfig;
use noisecal::experiment::{generate, ExperimentConfig, ScenarioConfig};
use noisecal::noisegen::{NoiseSpec, PmdType};
use noisecal::trainer::{run_experiment, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().collect();
    let lambda: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.15);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);

    let cfg = ExperimentConfig::new(ScenarioConfig::simplex(2, 8, 10_000, 4.0), NoiseSpec::pmd(PmdType::TypeI, 0.35));
    let data = generate(&cfg, seed)?;
    let train = TrainConfig {
        seed,
        lr_sampled: 0.01,
        calibration: CalibrationConfig {
            lambda,
            ..CalibrationConfig::mean_based()
        },
        ..TrainConfig::default()
    };
    let out = run_experiment(&train, data.train.clone(), &data.evaluator()?)?;

    println!("epoch  tau   corrected rounds  noise   agreement  min_pure_tau");
    for e in &out.report.epochs {
        println!(
            "{:>5}  {:<5} {:>9} {:>6}  {:.4}  {:.4}     {:.2}",
            e.epoch,
            e.tau.map_or("-".to_string(), |t| format!("{t:.2}")),
            e.corrected_count,
            e.fixpoint_rounds,
            e.achieved_noise_rate,
            e.bayes_agreement,
            e.min_pure_tau
        );
    }
    Ok(())
}
