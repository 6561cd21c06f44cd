//! PMD label noise at a target level, then symmetric class noise on top.

use noisecal::noisegen::{corrupt, resolve_scale, ClassNoise, MixtureOracle, NoiseSpec, PmdType, TransitionKind};
use noisecal::numkit::stream;

fn main() -> noisecal::Result<()> {
    let oracle = MixtureOracle::simplex(2, 8, 3.0)?;
    let mut rng = stream(11);

    for t in [PmdType::TypeI, PmdType::TypeII, PmdType::TypeIII] {
        for target in [0.35, 0.70] {
            let (x, y) = oracle.sample_clean(20_000, &mut rng);
            let res = resolve_scale(&oracle, &x, &y, t, target)?;
            let mut spec = NoiseSpec::pmd(t, target);
            spec.scale_factor = Some(res.scale_factor);
            let noisy = corrupt(x, y, &oracle, &spec, &mut rng)?;
            println!(
                "type {t:<3} target {target:.2}: scale {:>9.3}  flipped {:.4}",
                res.scale_factor, noisy.flip_rate
            );
        }
    }

    // class-dependent noise overlaid on PMD
    let oracle = MixtureOracle::simplex(4, 8, 4.0)?;
    let (x, y) = oracle.sample_clean(20_000, &mut rng);
    let mut spec = NoiseSpec::pmd(PmdType::TypeII, 0.2).with_class_noise(ClassNoise {
        kind: TransitionKind::Symmetric,
        epsilon: 0.2,
        pairs: vec![],
    });
    spec.scale_factor = Some(resolve_scale(&oracle, &x, &y, PmdType::TypeII, 0.2)?.scale_factor);
    let noisy = corrupt(x, y, &oracle, &spec, &mut rng)?;
    println!("{}: flipped {:.4}", spec.label(), noisy.flip_rate);
    Ok(())
}
