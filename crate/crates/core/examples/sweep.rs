//! A small α × λ sweep run in-process, printing the aggregate.

use noisecal::calibrate::Method;
use noisecal::experiment::{run_sweep, ExperimentConfig, ScenarioConfig};
use noisecal::noisegen::{NoiseSpec, PmdType};

fn main() -> noisecal::Result<()> {
    let mut cfg = ExperimentConfig::new(ScenarioConfig::simplex(2, 8, 4000, 4.0), NoiseSpec::pmd(PmdType::TypeI, 0.35));
    cfg.scenario.n_test = 4000;
    cfg.train.t_max = 15;
    cfg.train.lr_sampled = 0.01;
    cfg.sweep.methods = vec![Method::CovBased];
    cfg.sweep.alpha_grid = vec![0.1, 0.2, 0.3, 0.4];
    cfg.sweep.lambda_grid = vec![0.0, 0.15];
    cfg.sweep.seeds = vec![0, 1];

    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    for r in run_sweep(&cfg, jobs)? {
        let s = &r.report.summary;
        println!(
            "{} alpha {:.1} lambda {:.2} seed {}: agreement {:.4} accuracy {:.4}",
            r.cell.method, r.cell.alpha, r.cell.lambda, r.cell.seed, s.final_agreement, s.final_accuracy
        );
    }
    Ok(())
}
