//! Fit class models on noisy labels three ways and sample from them.

use noisecal::calibrate::{fit_models, sample_calibrated, CalibrationConfig};
use noisecal::noisegen::{corrupt, resolve_scale, MixtureOracle, NoiseSpec, PmdType};
use noisecal::numkit::{norm2, stream, sub};

fn main() -> noisecal::Result<()> {
    let oracle = MixtureOracle::simplex(3, 8, 4.0)?;
    let mut rng = stream(3);
    let (x, y) = oracle.sample_clean(6000, &mut rng);
    let mut spec = NoiseSpec::pmd(PmdType::TypeI, 0.35);
    spec.scale_factor = Some(resolve_scale(&oracle, &x, &y, PmdType::TypeI, 0.35)?.scale_factor);
    let noisy = corrupt(x, y, &oracle, &spec, &mut rng)?;
    println!("noisy labels: {:.3} flipped", noisy.flip_rate);

    let truths = oracle.means();
    for config in [CalibrationConfig::mean_based(), CalibrationConfig::cov_based(0.2)] {
        let fitted = fit_models(&config, &noisy.training)?;
        let errs: Vec<String> = fitted
            .models
            .iter()
            .map(|m| format!("{:.3}", norm2(&sub(&m.mean, &truths[m.class_id]))))
            .collect();
        let sampled = sample_calibrated(&fitted.models, config.lambda, noisy.training.len(), &mut rng)?;
        println!(
            "{:<10} mean errors [{}]  disturbance {:.2}  sampled {}",
            config.method.to_string(),
            errs.join(", "),
            fitted.models[0].disturbance,
            sampled.len()
        );
    }
    Ok(())
}
