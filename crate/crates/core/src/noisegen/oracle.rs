use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::GaussianClassModel;
use crate::error::{Error, Result};
use crate::numkit::{cholesky, cholesky_solve, sample_with_factor, sqrt_factor, Matrix, Stream};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone)]
struct ClassDensity {
    chol: Matrix,
    log_norm: f64,
    sampler: Matrix,
}

impl ClassDensity {
    fn new(class: usize, model: &GaussianClassModel) -> Result<Self> {
        let cov = model.covariance();
        let d = cov.rows();
        let chol = match cholesky(&cov) {
            Some(l) => l,
            None => {
                let mut jittered = cov.clone();
                jittered.add_diag(1e-8 * cov.trace() / d as f64);
                cholesky(&jittered).ok_or(Error::SingularCovariance(format!("class {class}")))?
            }
        };
        let log_det: f64 = 2.0 * chol.diag().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            chol,
            log_norm: -0.5 * (d as f64 * LN_2PI + log_det),
            sampler: sqrt_factor(&cov)?,
        })
    }

    fn log_density(&self, mean: &[f64], x: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
        let sol = cholesky_solve(&self.chol, &diff);
        let quad: f64 = diff.iter().zip(&sol).map(|(a, b)| a * b).sum();
        self.log_norm - 0.5 * quad
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OracleParams {
    classes: Vec<GaussianClassModel>,
    priors: Vec<f64>,
}

/// Gaussian mixture with known class models and priors, which makes the
/// clean posterior η(x) analytic.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "OracleParams", into = "OracleParams")]
pub struct MixtureOracle {
    classes: Vec<GaussianClassModel>,
    priors: Vec<f64>,
    densities: Vec<ClassDensity>,
}

impl TryFrom<OracleParams> for MixtureOracle {
    type Error = Error;

    fn try_from(p: OracleParams) -> Result<Self> {
        MixtureOracle::new(p.classes, p.priors)
    }
}

impl From<MixtureOracle> for OracleParams {
    fn from(o: MixtureOracle) -> Self {
        OracleParams {
            classes: o.classes,
            priors: o.priors,
        }
    }
}

impl MixtureOracle {
    pub fn new(classes: Vec<GaussianClassModel>, priors: Vec<f64>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::EmptyInput);
        }
        if priors.len() != classes.len() {
            return Err(Error::LengthMismatch {
                what: "priors",
                expected: classes.len(),
                got: priors.len(),
            });
        }
        let total: f64 = priors.iter().sum();
        if (total - 1.0).abs() > 1e-12 || priors.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid(format!("priors must be a probability vector (sum {total})")));
        }
        let d = classes[0].dim();
        let mut densities = Vec::with_capacity(classes.len());
        for (c, model) in classes.iter().enumerate() {
            if model.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: model.dim(),
                });
            }
            densities.push(ClassDensity::new(c, model)?);
        }
        Ok(Self {
            classes,
            priors,
            densities,
        })
    }

    /// `k` unit-covariance classes with equal priors whose means sit on the
    /// vertices of a regular simplex with pairwise distance `separation`.
    ///
    /// The simplex spans the first `k − 1` coordinates, so `d ≥ k − 1` is
    /// required.
    pub fn simplex(k: usize, d: usize, separation: f64) -> Result<Self> {
        let means = simplex_means(k, d, separation)?;
        let classes = means
            .into_iter()
            .enumerate()
            .map(|(c, mean)| GaussianClassModel::new(c, mean, Matrix::identity(d), 1))
            .collect::<Result<Vec<_>>>()?;
        Self::new(classes, vec![1.0 / k as f64; k])
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.classes[0].dim()
    }

    pub fn classes(&self) -> &[GaussianClassModel] {
        &self.classes
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.classes.iter().map(|c| c.mean.clone()).collect()
    }

    /// log πc + log N(x | μc, Σc) per class.
    pub fn log_joint(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self
            .classes
            .iter()
            .zip(&self.densities)
            .zip(&self.priors)
            .map(|((model, dens), &p)| p.ln() + dens.log_density(&model.mean, x))
            .collect())
    }

    /// Clean class posterior η(x).
    pub fn bayes_posterior(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.log_joint(x)?))
    }

    /// Bayes optimal label η*(x).
    pub fn bayes_label(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.log_joint(x)?))
    }

    /// Draws labels from the priors, then features from that class.
    pub fn sample_clean(&self, n: usize, rng: &mut Stream) -> (Matrix, Vec<usize>) {
        let d = self.dim();
        let mut features = Matrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut label = self.priors.len() - 1;
            for (c, &p) in self.priors.iter().enumerate() {
                acc += p;
                if u < acc {
                    label = c;
                    break;
                }
            }
            let point = sample_with_factor(&self.classes[label].mean, &self.densities[label].sampler, 1, rng);
            features.row_mut(i).copy_from_slice(point.row(0));
            labels.push(label);
        }
        (features, labels)
    }
}

pub(crate) fn simplex_means(k: usize, d: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if k < 2 {
        return Err(Error::invalid("simplex needs at least 2 classes"));
    }
    if d + 1 < k {
        return Err(Error::invalid(format!("simplex with {k} vertices needs d ≥ {}", k - 1)));
    }
    // Centered standard basis vectors of R^k, scaled so the pairwise distance
    // is `separation`, then expressed in an orthonormal basis of their span.
    let scale = separation / std::f64::consts::SQRT_2;
    let centered: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            (0..k)
                .map(|j| scale * (if j == c { 1.0 } else { 0.0 } - 1.0 / k as f64))
                .collect()
        })
        .collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k - 1);
    for v in centered.iter().take(k - 1) {
        let mut u = v.clone();
        for b in &basis {
            let proj: f64 = u.iter().zip(b).map(|(x, y)| x * y).sum();
            u.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        basis.push(u.into_iter().map(|x| x / norm).collect());
    }
    Ok(centered
        .iter()
        .map(|v| {
            let mut mean = vec![0.0; d];
            for (slot, b) in mean.iter_mut().zip(&basis) {
                *slot = v.iter().zip(b).map(|(x, y)| x * y).sum();
            }
            mean
        })
        .collect())
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest entry; the first one on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices of the largest and second largest entries.
pub fn top_two(values: &[f64]) -> (usize, usize) {
    let a = argmax(values);
    let mut b = if a == 0 { 1 } else { 0 };
    for (i, v) in values.iter().enumerate() {
        if i != a && *v > values[b] {
            b = i;
        }
    }
    (a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{norm2, stream};

    fn one_dim(mu0: f64, mu1: f64, var: f64) -> MixtureOracle {
        let classes = vec![
            GaussianClassModel::new(0, vec![mu0], Matrix::from_diag(&[var]), 1).unwrap(),
            GaussianClassModel::new(1, vec![mu1], Matrix::from_diag(&[var]), 1).unwrap(),
        ];
        MixtureOracle::new(classes, vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn far_separated_posterior_is_certain() {
        let o = MixtureOracle::simplex(3, 4, 20.0).unwrap();
        let mu0 = o.classes()[0].mean.clone();
        let p = o.bayes_posterior(&mu0).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn midpoint_is_even() {
        let o = MixtureOracle::simplex(2, 3, 2.0).unwrap();
        let m = o.means();
        let mid: Vec<f64> = m[0].iter().zip(&m[1]).map(|(a, b)| 0.5 * (a + b)).collect();
        let p = o.bayes_posterior(&mid).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn one_dim_matches_closed_form_logistic() {
        let (mu0, mu1, var) = (-0.7, 1.3, 1.7);
        let o = one_dim(mu0, mu1, var);
        for i in 0..41 {
            let x = -4.0 + 0.2 * i as f64;
            let z = (mu1 - mu0) * (x - 0.5 * (mu0 + mu1)) / var;
            let expected = 1.0 / (1.0 + (-z).exp());
            let p = o.bayes_posterior(&[x]).unwrap();
            assert!((p[1] - expected).abs() < 1e-10, "x={x}");
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn simplex_geometry() {
        for (k, d) in [(2, 1), (2, 8), (3, 2), (5, 7)] {
            let m = simplex_means(k, d, 3.0).unwrap();
            for a in 0..k {
                for b in (a + 1)..k {
                    let diff: Vec<f64> = m[a].iter().zip(&m[b]).map(|(x, y)| x - y).collect();
                    assert!((norm2(&diff) - 3.0).abs() < 1e-12);
                }
            }
        }
        assert!(simplex_means(4, 2, 1.0).is_err());
    }

    #[test]
    fn priors_must_sum_to_one() {
        let c = GaussianClassModel::new(0, vec![0.0], Matrix::identity(1), 1).unwrap();
        assert!(MixtureOracle::new(vec![c.clone(), c], vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn sampled_labels_follow_priors() {
        let classes = vec![
            GaussianClassModel::new(0, vec![0.0], Matrix::identity(1), 1).unwrap(),
            GaussianClassModel::new(1, vec![5.0], Matrix::identity(1), 1).unwrap(),
        ];
        let o = MixtureOracle::new(classes, vec![0.25, 0.75]).unwrap();
        let (_, labels) = o.sample_clean(40_000, &mut stream(1));
        let frac = labels.iter().filter(|&&l| l == 1).count() as f64 / 40_000.0;
        assert!((frac - 0.75).abs() < 0.01);
    }

    #[test]
    fn json_round_trip() {
        let o = MixtureOracle::simplex(3, 3, 2.0).unwrap();
        let s = serde_json::to_string(&o).unwrap();
        let back: MixtureOracle = serde_json::from_str(&s).unwrap();
        assert_eq!(back.means(), o.means());
    }
}
