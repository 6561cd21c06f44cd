//! Experiment configuration, dataset generation and sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::{GaussianClassModel, Method};
use crate::error::{Error, Result};
use crate::noisegen::{
    corrupt, read_dataset_file, resolve_scale, write_dataset_file, LabeledSet, MixtureOracle, NoiseSpec, PmdType,
    TrainingSet,
};
use crate::numkit::{derived_stream, Matrix};
use crate::trainer::{run_experiment, TrainConfig};
use crate::verify::{Evaluator, RunReport};

const TRAIN_STREAM: u64 = 10;
const TEST_STREAM: u64 = 11;

/// Fraction of the generated noisy training data held out for validation.
pub const VALIDATION_FRACTION: f64 = 0.1;

fn default_n_test() -> usize {
    10_000
}

/// Class geometry. Either `separation` (simplex vertices, unit covariance)
/// or explicit `means`, optionally with `covariances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub k: usize,
    pub d: usize,
    pub n: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<Matrix>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
}

impl ScenarioConfig {
    pub fn simplex(k: usize, d: usize, n: usize, separation: f64) -> Self {
        Self {
            k,
            d,
            n,
            n_test: default_n_test(),
            separation: Some(separation),
            means: None,
            covariances: None,
            priors: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 || self.d == 0 {
            return Err(Error::Config(format!("need k ≥ 2 and d ≥ 1, got k = {} d = {}", self.k, self.d)));
        }
        if self.n < 10 * self.k {
            return Err(Error::Config(format!("n = {} is below 10·k = {}", self.n, 10 * self.k)));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be positive".into()));
        }
        match (&self.separation, &self.means) {
            (Some(_), Some(_)) => return Err(Error::Config("give either separation or means, not both".into())),
            (None, None) => return Err(Error::Config("scenario needs separation or means".into())),
            (Some(s), None) if !(*s > 0.0) => return Err(Error::Config(format!("separation {s} must be > 0"))),
            _ => {}
        }
        if self.covariances.is_some() && self.means.is_none() {
            return Err(Error::Config("covariances require explicit means".into()));
        }
        Ok(())
    }

    pub fn oracle(&self) -> Result<MixtureOracle> {
        self.validate()?;
        let priors = self.priors.clone().unwrap_or_else(|| vec![1.0 / self.k as f64; self.k]);
        let means = match (&self.means, self.separation) {
            (Some(m), _) => m.clone(),
            (None, Some(s)) => MixtureOracle::simplex(self.k, self.d, s).map_err(config_err)?.means(),
            (None, None) => unreachable!("validated"),
        };
        if means.len() != self.k {
            return Err(Error::Config(format!("{} means for k = {}", means.len(), self.k)));
        }
        let classes = means
            .into_iter()
            .enumerate()
            .map(|(c, mean)| {
                let cov = match &self.covariances {
                    Some(covs) => covs.get(c).cloned().ok_or_else(|| Error::Config(format!("no covariance for class {c}")))?,
                    None => Matrix::identity(self.d),
                };
                if mean.len() != self.d {
                    return Err(Error::Config(format!("mean of class {c} has length {}", mean.len())));
                }
                GaussianClassModel::new(c, mean, cov, 1).map_err(config_err)
            })
            .collect::<Result<Vec<_>>>()?;
        MixtureOracle::new(classes, priors).map_err(config_err)
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::MeanBased, Method::CovBased]
}
fn default_alpha_grid() -> Vec<f64> {
    vec![0.2]
}
fn default_lambda_grid() -> Vec<f64> {
    vec![0.15]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            methods: default_methods(),
            alpha_grid: default_alpha_grid(),
            lambda_grid: default_lambda_grid(),
            seeds: default_seeds(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    #[serde(default = "NoiseSpec::clean")]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    /// Output directory; the `--out` flag wins over this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(scenario: ScenarioConfig, noise: NoiseSpec) -> Self {
        Self {
            scenario,
            noise,
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.train.validate()?;
        let s = &self.sweep;
        if s.methods.is_empty() || s.alpha_grid.is_empty() || s.lambda_grid.is_empty() || s.seeds.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if let Some(l) = s.lambda_grid.iter().find(|l| !(0.0..=1.0).contains(*l)) {
            return Err(Error::Config(format!("lambda {l} outside [0, 1]")));
        }
        if let Some(a) = s.alpha_grid.iter().find(|a| !(**a >= 0.0)) {
            return Err(Error::Config(format!("alpha {a} must be ≥ 0")));
        }
        if !(0.0..=1.0).contains(&self.noise.target_level) {
            return Err(Error::Config(format!("noise target {} outside [0, 1]", self.noise.target_level)));
        }
        Ok(())
    }
}

/// Written next to the generated CSVs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Noise spec with the scale factor filled in.
    pub noise: NoiseSpec,
    pub target_level: f64,
    pub scale_factor: Option<f64>,
    /// Flip rate over train and validation together.
    pub achieved_noise_rate: f64,
    pub train_noise_rate: f64,
    pub val_noise_rate: f64,
    pub oracle: MixtureOracle,
}

#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub train: TrainingSet,
    pub train_clean: Vec<usize>,
    pub val: LabeledSet,
    pub val_clean: Vec<usize>,
    pub test: LabeledSet,
    pub metadata: Metadata,
}

impl GeneratedData {
    pub fn evaluator(&self) -> Result<Evaluator> {
        Ok(Evaluator::new(self.metadata.oracle.clone(), self.test.clone(), self.train_clean.clone())?
            .with_noisy_validation(self.val.clone()))
    }
}

fn rate(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

fn split_rows(m: &Matrix, at: usize) -> (Matrix, Matrix) {
    let d = m.cols();
    let (a, b) = m.as_slice().split_at(at * d);
    (
        Matrix::from_vec(at, d, a.to_vec()).expect("row split"),
        Matrix::from_vec(m.rows() - at, d, b.to_vec()).expect("row split"),
    )
}

/// Samples the scenario, resolves the PMD scale if needed, corrupts labels
/// and holds out the last 10% of the noisy data for validation.
pub fn generate(config: &ExperimentConfig, seed: u64) -> Result<GeneratedData> {
    config.validate()?;
    let oracle = config.scenario.oracle()?;
    let k = oracle.num_classes();
    let mut rng = derived_stream(seed, TRAIN_STREAM);
    let (x, y) = oracle.sample_clean(config.scenario.n, &mut rng);

    let mut spec = config.noise.clone();
    if spec.pmd_type != PmdType::None && spec.scale_factor.is_none() {
        let res = resolve_scale(&oracle, &x, &y, spec.pmd_type, spec.target_level)?;
        log::info!(
            "resolved PMD scale {:.6} for target {} (expected rate {:.4})",
            res.scale_factor,
            spec.target_level,
            res.achieved_level
        );
        spec.scale_factor = Some(res.scale_factor);
    }
    let noisy = corrupt(x, y, &oracle, &spec, &mut rng)?;

    let n = noisy.clean_labels.len();
    let n_val = (VALIDATION_FRACTION * n as f64).round() as usize;
    let n_train = n - n_val;
    let (train_x, val_x) = split_rows(noisy.training.features(), n_train);
    let labels = noisy.training.labels();
    let (train_noisy, val_noisy) = labels.split_at(n_train);
    let (train_clean, val_clean) = noisy.clean_labels.split_at(n_train);

    let mut test_rng = derived_stream(seed, TEST_STREAM);
    let (tx, ty) = oracle.sample_clean(config.scenario.n_test, &mut test_rng);

    let metadata = Metadata {
        seed,
        n_train,
        n_val,
        n_test: ty.len(),
        target_level: spec.target_level,
        scale_factor: spec.scale_factor,
        noise: spec,
        achieved_noise_rate: noisy.flip_rate,
        train_noise_rate: rate(train_noisy, train_clean),
        val_noise_rate: rate(val_noisy, val_clean),
        oracle,
    };
    Ok(GeneratedData {
        train: TrainingSet::new(train_x, train_noisy.to_vec(), k)?,
        train_clean: train_clean.to_vec(),
        val: LabeledSet::new(val_x, val_noisy.to_vec(), k)?,
        val_clean: val_clean.to_vec(),
        test: LabeledSet::new(tx, ty, k)?,
        metadata,
    })
}

pub const TRAIN_FILE: &str = "train.csv";
pub const VAL_FILE: &str = "val.csv";
pub const TEST_FILE: &str = "test.csv";
pub const METADATA_FILE: &str = "metadata.json";

/// Writes `train.csv`, `val.csv`, `test.csv` and `metadata.json`. The test
/// file repeats the clean label in the noisy column.
pub fn write_generated(dir: &Path, data: &GeneratedData) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_dataset_file(&dir.join(TRAIN_FILE), data.train.features(), &data.train_clean, data.train.labels())?;
    write_dataset_file(&dir.join(VAL_FILE), &data.val.features, &data.val_clean, &data.val.labels)?;
    write_dataset_file(&dir.join(TEST_FILE), &data.test.features, &data.test.labels, &data.test.labels)?;
    fs::write(dir.join(METADATA_FILE), serde_json::to_string_pretty(&data.metadata)?)?;
    Ok(())
}

/// Reads back what [`write_generated`] wrote. `val.csv` is optional.
pub fn read_generated(train: &Path, test: &Path, metadata: &Path) -> Result<GeneratedData> {
    let metadata: Metadata = serde_json::from_str(&fs::read_to_string(metadata)?)?;
    let k = metadata.oracle.num_classes();
    let tr = read_dataset_file(train)?;
    let te = read_dataset_file(test)?;
    let val_path = train.with_file_name(VAL_FILE);
    let (val, val_clean) = if val_path.exists() {
        let v = read_dataset_file(&val_path)?;
        (LabeledSet::new(v.features, v.noisy, k)?, v.clean)
    } else {
        (LabeledSet::new(Matrix::zeros(0, metadata.oracle.dim()), Vec::new(), k)?, Vec::new())
    };
    Ok(GeneratedData {
        train: TrainingSet::new(tr.features, tr.noisy, k)?,
        train_clean: tr.clean,
        val,
        val_clean,
        test: LabeledSet::new(te.features, te.clean, k)?,
        metadata,
    })
}

/// One point of the sweep cross-product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
}

impl Cell {
    pub fn file_stem(&self) -> String {
        format!("{}_a{}_l{}_s{}", self.method, self.alpha, self.lambda, self.seed)
    }

    pub fn train_config(&self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = *base;
        cfg.seed = self.seed;
        cfg.calibration.method = self.method;
        cfg.calibration.alpha = self.alpha;
        cfg.calibration.lambda = self.lambda;
        cfg
    }
}

/// method × α × λ × seed, in that nesting order.
pub fn cells(sweep: &SweepConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &method in &sweep.methods {
        for &alpha in &sweep.alpha_grid {
            for &lambda in &sweep.lambda_grid {
                for &seed in &sweep.seeds {
                    out.push(Cell {
                        method,
                        alpha,
                        lambda,
                        seed,
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub cell: Cell,
    pub report: RunReport,
    pub error: Option<String>,
}

/// Runs every cell on a pool of `jobs` threads. Each seed's dataset is
/// generated once and shared by the cells using it. A failing cell keeps
/// its partial report and the error; the others continue.
pub fn run_sweep(config: &ExperimentConfig, jobs: usize) -> Result<Vec<CellResult>> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    pool.install(|| {
        let data: Vec<(u64, Result<(GeneratedData, Evaluator)>)> = config
            .sweep
            .seeds
            .par_iter()
            .map(|&seed| {
                let d = generate(config, seed).and_then(|g| {
                    let e = g.evaluator()?;
                    Ok((g, e))
                });
                (seed, d)
            })
            .collect();
        let mut by_seed = std::collections::HashMap::new();
        for (seed, d) in data {
            by_seed.insert(seed, d?);
        }
        let noise = config.noise.label();
        Ok(cells(&config.sweep)
            .into_par_iter()
            .map(|cell| {
                let (gen, evaluator) = &by_seed[&cell.seed];
                let cfg = cell.train_config(&config.train);
                log::info!("cell {} ({noise})", cell.file_stem());
                match run_experiment(&cfg, gen.train.clone(), evaluator) {
                    Ok(out) => CellResult {
                        cell,
                        report: out.report,
                        error: None,
                    },
                    Err(f) => {
                        log::warn!("cell {} failed: {}", cell.file_stem(), f.error);
                        CellResult {
                            cell,
                            report: f.report,
                            error: Some(f.error.to_string()),
                        }
                    }
                }
            })
            .collect())
    })
}

pub const AGGREGATE_HEADER: [&str; 7] = [
    "method",
    "alpha",
    "lambda",
    "noise",
    "seed",
    "final_agreement",
    "final_accuracy",
];

/// Writes `cells/<stem>.json` per cell and `aggregate.csv`. Failed cells
/// get empty metric fields in the aggregate.
pub fn write_sweep(dir: &Path, noise_label: &str, results: &[CellResult]) -> Result<()> {
    let cell_dir = dir.join("cells");
    fs::create_dir_all(&cell_dir)?;
    let mut w = csv::Writer::from_path(dir.join("aggregate.csv"))?;
    w.write_record(AGGREGATE_HEADER)?;
    for r in results {
        fs::write(cell_dir.join(format!("{}.json", r.cell.file_stem())), r.report.to_json()?)?;
        let (agr, acc) = match r.error {
            None => (
                r.report.summary.final_agreement.to_string(),
                r.report.summary.final_accuracy.to_string(),
            ),
            Some(_) => (String::new(), String::new()),
        };
        w.write_record([
            r.cell.method.to_string(),
            r.cell.alpha.to_string(),
            r.cell.lambda.to_string(),
            noise_label.to_string(),
            r.cell.seed.to_string(),
            agr,
            acc,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noisegen::{ClassNoise, TransitionKind};

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(ScenarioConfig::simplex(2, 3, 400, 3.0), NoiseSpec::pmd(PmdType::TypeI, 0.35));
        cfg.scenario.n_test = 500;
        cfg.train.t_max = 8;
        cfg.train.t_w = 3;
        cfg
    }

    #[test]
    fn config_round_trip() {
        let mut cfg = small();
        cfg.sweep.alpha_grid = vec![0.1, 0.2, 0.3, 0.4];
        cfg.noise = cfg.noise.with_class_noise(ClassNoise {
            kind: TransitionKind::Symmetric,
            epsilon: 0.1,
            pairs: vec![],
        });
        let text = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn config_rejections() {
        let ok = r#"{"scenario": {"k": 2, "d": 2, "n": 100, "separation": 2.0}}"#;
        ExperimentConfig::from_json(ok).unwrap();
        for bad in [
            r#"{"scenario": {"k": 2, "d": 2, "n": 100, "separation": 2.0}, "extra": 1}"#,
            r#"{"scenario": {"k": 2, "d": 2, "n": 19, "separation": 2.0}}"#,
            r#"{"scenario": {"k": 2, "d": 2, "n": 100}}"#,
            r#"{"scenario": {"k": 2, "d": 2, "n": 100, "separation": 2.0}, "sweep": {"seeds": []}}"#,
            r#"{"scenario": {"k": 2, "d": 2, "n": 100, "separation": 2.0}, "train": {"lr": 0.1}}"#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn explicit_means() {
        let text = r#"{"scenario": {"k": 2, "d": 2, "n": 100, "means": [[0, 0], [3, 0]],
            "covariances": [[[1, 0], [0, 1]], [[2, 0], [0, 1]]], "priors": [0.3, 0.7]}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        let o = cfg.scenario.oracle().unwrap();
        assert_eq!(o.priors(), &[0.3, 0.7]);
        assert_eq!(o.classes()[1].cov[(0, 0)], 2.0);
    }

    #[test]
    fn generation_split_and_clean_case() {
        let mut cfg = small();
        cfg.noise = NoiseSpec::clean();
        let g = generate(&cfg, 3).unwrap();
        assert_eq!(g.metadata.n_val, 40);
        assert_eq!(g.train.len(), 360);
        assert_eq!(g.train.labels(), &g.train_clean[..]);
        assert_eq!(g.val.labels, g.val_clean);
        assert_eq!(g.metadata.achieved_noise_rate, 0.0);
    }

    #[test]
    fn cell_count() {
        let s = SweepConfig {
            methods: vec![Method::MeanBased, Method::CovBased],
            alpha_grid: vec![0.1, 0.2, 0.3, 0.4],
            lambda_grid: vec![0.1, 0.15, 0.2, 0.25],
            seeds: vec![0, 1, 2],
        };
        assert_eq!(cells(&s).len(), 96);
    }

    #[test]
    fn sweep_is_deterministic() {
        let mut cfg = small();
        cfg.sweep.seeds = vec![0, 1];
        cfg.sweep.methods = vec![Method::MeanBased];
        let a = run_sweep(&cfg, 2).unwrap();
        let b = run_sweep(&cfg, 1).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.report.to_json().unwrap(), y.report.to_json().unwrap());
        }
    }
}
