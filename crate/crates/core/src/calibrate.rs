//! Per-class Gaussian feature models and calibrated resampling.

use rand::RngCore;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noisegen::{LabeledSet, TrainingSet};
use crate::numkit::{
    check_psd, derived_stream, empirical_moments, sample_with_factor, sqrt_factor, sym_eig, Matrix, Stream,
    SYMMETRY_TOL,
};
use crate::robustmean::AgnosticMean;

/// Gaussian model of one class's features.
///
/// The covariance is kept as a base matrix plus a scalar multiple of the
/// all-ones matrix, `cov + disturbance · 𝟙𝟙ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianClassModel {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub cov: Matrix,
    #[serde(default)]
    pub disturbance: f64,
    pub count: usize,
}

impl GaussianClassModel {
    pub fn new(class_id: usize, mean: Vec<f64>, cov: Matrix, count: usize) -> Result<Self> {
        let d = mean.len();
        if cov.rows() != d || cov.cols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: cov.rows(),
            });
        }
        if !mean.iter().all(|v| v.is_finite()) || !cov.is_finite() {
            return Err(Error::NonFinite("class model"));
        }
        if !cov.is_symmetric(SYMMETRY_TOL) {
            return Err(Error::NotSymmetric {
                asymmetry: cov.asymmetry(),
            });
        }
        check_psd(&cov)?;
        Ok(Self {
            class_id,
            mean,
            cov,
            disturbance: 0.0,
            count,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Dense covariance including the disturbance term.
    pub fn covariance(&self) -> Matrix {
        if self.disturbance == 0.0 {
            return self.cov.clone();
        }
        let mut c = self.cov.clone();
        let d = self.dim();
        for i in 0..d {
            for j in 0..d {
                c[(i, j)] += self.disturbance;
            }
        }
        c
    }

    /// Draws `x = μ + F z + √α · g · 𝟙` with `F Fᵀ = cov` and scalar `g`.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Result<Matrix> {
        let factor = sqrt_factor(&self.cov)?;
        let mut points = sample_with_factor(&self.mean, &factor, n, rng);
        if self.disturbance > 0.0 {
            let s = self.disturbance.sqrt();
            for i in 0..n {
                let g: f64 = StandardNormal.sample(rng);
                points.row_mut(i).iter_mut().for_each(|x| *x += s * g);
            }
        }
        Ok(points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MeanBased,
    CovBased,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::MeanBased => "mean_based",
            Method::CovBased => "cov_based",
        })
    }
}

/// Covariance paired with the robust mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanCovariance {
    /// Damping-weighted second moment about the robust mean.
    #[default]
    Weighted,
    /// trace/d · I of the weighted second moment.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub method: Method,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Sampled fraction; 0 turns sampling off.
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(rename = "C", default = "default_c")]
    pub damping_constant: f64,
    #[serde(default)]
    pub mean_covariance: MeanCovariance,
}

fn default_alpha() -> f64 {
    0.2
}

fn default_lambda() -> f64 {
    0.15
}

fn default_c() -> f64 {
    crate::robustmean::DEFAULT_DAMPING_CONSTANT
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            method: Method::MeanBased,
            alpha: default_alpha(),
            lambda: default_lambda(),
            damping_constant: default_c(),
            mean_covariance: MeanCovariance::Weighted,
        }
    }
}

impl CalibrationConfig {
    pub fn mean_based() -> Self {
        Self::default()
    }

    pub fn cov_based(alpha: f64) -> Self {
        Self {
            method: Method::CovBased,
            alpha,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha {} must be ≥ 0", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.damping_constant > 0.0) {
            return Err(Error::Config(format!("C {} must be > 0", self.damping_constant)));
        }
        Ok(())
    }
}

fn ensure_class_size(class_id: usize, features: &Matrix) -> Result<()> {
    if features.rows() < 2 {
        return Err(Error::ClassTooSmall {
            class: class_id,
            count: features.rows(),
        });
    }
    Ok(())
}

/// Sample mean and population covariance.
pub fn fit_empirical(class_id: usize, features: &Matrix) -> Result<GaussianClassModel> {
    ensure_class_size(class_id, features)?;
    let (mean, cov) = empirical_moments(features)?;
    Ok(GaussianClassModel {
        class_id,
        mean,
        cov,
        disturbance: 0.0,
        count: features.rows(),
    })
}

/// Empirical estimators with `alpha · 𝟙𝟙ᵀ` added to the covariance.
pub fn fit_cov_based(class_id: usize, features: &Matrix, alpha: f64) -> Result<GaussianClassModel> {
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha {alpha} must be ≥ 0")));
    }
    let mut model = fit_empirical(class_id, features)?;
    model.disturbance = alpha;
    Ok(model)
}

/// Robust mean, paired with a damping-weighted covariance about it.
pub fn fit_mean_based(
    class_id: usize,
    features: &Matrix,
    estimator: &AgnosticMean,
    mode: MeanCovariance,
) -> Result<GaussianClassModel> {
    ensure_class_size(class_id, features)?;
    let mean = estimator.estimate(features)?;
    let weights = estimator.weights(features)?.weights;
    let total: f64 = weights.iter().sum();
    let weights = if total > 0.0 {
        weights
    } else {
        vec![1.0; features.rows()]
    };
    let total: f64 = weights.iter().sum();

    let d = features.cols();
    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (x, &w) in features.row_iter().zip(&weights) {
        for ((c, &xi), &mi) in centered.iter_mut().zip(x).zip(&mean) {
            *c = xi - mi;
        }
        for i in 0..d {
            let wi = w * centered[i];
            for j in i..d {
                cov[(i, j)] += wi * centered[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / total;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let min = sym_eig(&cov)?.min_value();
    if min < 0.0 {
        cov.add_diag(-min);
    }
    if mode == MeanCovariance::Isotropic {
        cov = Matrix::identity(d).scale(cov.trace() / d as f64);
    }
    Ok(GaussianClassModel {
        class_id,
        mean,
        cov,
        disturbance: 0.0,
        count: features.rows(),
    })
}

pub fn fit_class(config: &CalibrationConfig, class_id: usize, features: &Matrix) -> Result<GaussianClassModel> {
    match config.method {
        Method::MeanBased => fit_mean_based(
            class_id,
            features,
            &AgnosticMean::with_constant(config.damping_constant),
            config.mean_covariance,
        ),
        Method::CovBased => fit_cov_based(class_id, features, config.alpha),
    }
}

/// Fitted models plus the classes skipped for having fewer than two samples.
#[derive(Debug, Clone)]
pub struct FittedModels {
    pub models: Vec<GaussianClassModel>,
    pub skipped: Vec<usize>,
}

/// Fits every class of the training set under its current labels.
pub fn fit_models(config: &CalibrationConfig, data: &TrainingSet) -> Result<FittedModels> {
    let results: Vec<(usize, Result<GaussianClassModel>)> = (0..data.num_classes())
        .into_par_iter()
        .map(|c| (c, fit_class(config, c, &data.class_features(c))))
        .collect();
    let mut models = Vec::new();
    let mut skipped = Vec::new();
    for (c, r) in results {
        match r {
            Ok(m) => models.push(m),
            Err(Error::ClassTooSmall { .. }) => {
                log::warn!("class {c} has fewer than 2 samples; skipped for calibration");
                skipped.push(c);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(FittedModels { models, skipped })
}

/// Splits `total` across `weights` by largest remainder; ties go to the
/// lower index.
pub fn largest_remainder(weights: &[usize], total: usize) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut counts = Vec::with_capacity(weights.len());
    let mut remainders = Vec::with_capacity(weights.len());
    for (i, &w) in weights.iter().enumerate() {
        let exact = (w as u128) * (total as u128);
        counts.push((exact / sum as u128) as usize);
        remainders.push((exact % sum as u128, i));
    }
    let assigned: usize = counts.iter().sum();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in remainders.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// Draws `round(λ n)` labelled points from the class models, split in
/// proportion to each model's sample count. Each class uses its own stream
/// derived from one draw of `rng`.
pub fn sample_calibrated(
    models: &[GaussianClassModel],
    lambda: f64,
    n_total: usize,
    rng: &mut Stream,
) -> Result<LabeledSet> {
    if models.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!("lambda {lambda} outside [0, 1]")));
    }
    let d = models[0].dim();
    let m = (lambda * n_total as f64).round() as usize;
    let counts = largest_remainder(&models.iter().map(|mo| mo.count).collect::<Vec<_>>(), m);
    let base = rng.next_u64();

    let blocks: Vec<Result<Matrix>> = models
        .par_iter()
        .zip(&counts)
        .map(|(model, &c)| model.sample(c, &mut derived_stream(base, model.class_id as u64)))
        .collect();

    let mut data = Vec::with_capacity(m * d);
    let mut labels = Vec::with_capacity(m);
    for (block, model) in blocks.into_iter().zip(models) {
        let block = block?;
        data.extend_from_slice(block.as_slice());
        labels.extend(std::iter::repeat_n(model.class_id, block.rows()));
    }
    let k = models.iter().map(|mo| mo.class_id).max().unwrap_or(0) + 1;
    LabeledSet::new(Matrix::from_vec(m, d, data)?, labels, k)
}
