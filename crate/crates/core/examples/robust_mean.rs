//! Robust vs. plain mean on a Huber-contaminated Gaussian.
//!
//! cargo run --release --example robust_mean -- [epsilon] [seeds]

use noisecal::calibrate::GaussianClassModel;
use noisecal::noisegen::{huber_mixture, PointMass, ShiftAndScatter};
use noisecal::numkit::{column_means, coordinate_median, norm2, stream, Matrix};
use noisecal::robustmean::AgnosticMean;

fn main() -> noisecal::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let eps: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.2);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let d = 16;
    let inlier = GaussianClassModel::new(0, vec![0.0; d], Matrix::identity(d), 1)?;
    let mut shift = vec![0.0; d];
    shift[0] = 10.0;

    let scatter = ShiftAndScatter {
        shift: shift.clone(),
        spread: 50.0,
    };
    let outliers: [(&str, &dyn noisecal::noisegen::OutlierSampler); 2] =
        [("point mass", &PointMass(shift)), ("shift + scatter", &scatter)];

    for (name, q) in outliers {
        let mut err = [0.0; 4];
        for seed in 0..seeds {
            let s = huber_mixture(&inlier, q, eps, 2000, &mut stream(seed))?;
            // true mean is the origin, so the error is just the norm
            err[0] += norm2(&AgnosticMean::default().estimate(&s.points)?);
            err[1] += norm2(&AgnosticMean::without_damping().estimate(&s.points)?);
            err[2] += norm2(&column_means(&s.points)?);
            err[3] += norm2(&coordinate_median(&s.points)?);
        }
        let n = seeds as f64;
        println!(
            "{name:>16}: robust {:.3}  undamped {:.3}  empirical {:.3}  median {:.3}",
            err[0] / n,
            err[1] / n,
            err[2] / n,
            err[3] / n
        );
    }
    Ok(())
}
