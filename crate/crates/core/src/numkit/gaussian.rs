use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::eigen::sym_eig;
use super::matrix::{cholesky, Matrix};
use crate::error::{Error, Result};

/// The generator behind every stochastic operation.
pub type Stream = ChaCha8Rng;

/// Eigenvalues below this are treated as a PSD violation.
pub const PSD_TOL: f64 = -1e-8;

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed for shard / class / purpose `index` (splitmix64 of `seed ⊕ index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = (seed ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derived_stream(seed: u64, index: u64) -> Stream {
    stream(derive_seed(seed, index))
}

/// Checks the PSD invariant and returns the smallest eigenvalue.
pub fn check_psd(cov: &Matrix) -> Result<f64> {
    let eig = sym_eig(cov)?;
    let min = eig.min_value();
    if min < PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(min)
}

/// A factor `F` with `F Fᵀ ≈ cov`.
///
/// Cholesky first; on a non-positive pivot the diagonal gets
/// `1e-8 · trace/d` of jitter and Cholesky is retried once. A matrix that
/// still fails (rank deficient with zero trace, e.g. the zero matrix) falls
/// back to the eigen square root `V · diag(√max(λ, 0))`.
pub fn sqrt_factor(cov: &Matrix) -> Result<Matrix> {
    check_psd(cov)?;
    if let Some(l) = cholesky(cov) {
        return Ok(l);
    }
    let d = cov.rows();
    let jitter = 1e-8 * cov.trace() / d as f64;
    if jitter > 0.0 {
        let mut jittered = cov.clone();
        jittered.add_diag(jitter);
        if let Some(l) = cholesky(&jittered) {
            return Ok(l);
        }
    }
    let eig = sym_eig(cov)?;
    let mut f = eig.vectors.clone();
    for (k, &lambda) in eig.values.iter().enumerate() {
        let s = lambda.max(0.0).sqrt();
        for i in 0..d {
            f[(i, k)] *= s;
        }
    }
    Ok(f)
}

/// `n` draws from N(mean, cov), one per row.
pub fn gaussian_sample(mean: &[f64], cov: &Matrix, n: usize, rng: &mut Stream) -> Result<Matrix> {
    let d = mean.len();
    if cov.rows() != d || cov.cols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cov.rows(),
        });
    }
    let factor = sqrt_factor(cov)?;
    Ok(sample_with_factor(mean, &factor, n, rng))
}

pub(crate) fn sample_with_factor(mean: &[f64], factor: &Matrix, n: usize, rng: &mut Stream) -> Matrix {
    let d = mean.len();
    let mut out = Matrix::zeros(n, d);
    let mut z = vec![0.0; factor.cols()];
    for i in 0..n {
        for zk in z.iter_mut() {
            *zk = StandardNormal.sample(rng);
        }
        let row = out.row_mut(i);
        for (r, (fr, &m)) in row.iter_mut().zip(factor.row_iter().zip(mean)) {
            *r = m + fr.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::stats::empirical_moments;

    #[test]
    fn zero_covariance_gives_the_mean() {
        let mut rng = stream(1);
        let s = gaussian_sample(&[1.0, -2.0], &Matrix::zeros(2, 2), 7, &mut rng).unwrap();
        for row in s.row_iter() {
            assert_eq!(row, &[1.0, -2.0]);
        }
    }

    #[test]
    fn standard_normal_moments() {
        let mut rng = stream(2);
        let s = gaussian_sample(&[0.0], &Matrix::identity(1), 100_000, &mut rng).unwrap();
        let (m, c) = empirical_moments(&s).unwrap();
        assert!(m[0].abs() < 0.02, "mean {}", m[0]);
        assert!((c[(0, 0)] - 1.0).abs() < 0.03, "var {}", c[(0, 0)]);
    }

    #[test]
    fn correlated_covariance_recovered() {
        let cov = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let mut rng = stream(3);
        let s = gaussian_sample(&[0.0, 0.0], &cov, 200_000, &mut rng).unwrap();
        let (_, c) = empirical_moments(&s).unwrap();
        assert!(c.sub(&cov).unwrap().max_abs() < 0.03);
    }

    #[test]
    fn rank_deficient_covariance_samples() {
        let cov = Matrix::filled(3, 3, 1.0);
        let mut rng = stream(4);
        let s = gaussian_sample(&[0.0; 3], &cov, 100, &mut rng).unwrap();
        assert!(s.is_finite());
    }

    #[test]
    fn not_psd_rejected() {
        let cov = Matrix::from_diag(&[1.0, -0.1]);
        let mut rng = stream(5);
        let err = gaussian_sample(&[0.0, 0.0], &cov, 1, &mut rng).unwrap_err();
        assert!(err.to_string().contains("not PSD"));
    }

    #[test]
    fn same_seed_same_points() {
        let cov = Matrix::from_rows(&[[1.0, 0.3], [0.3, 0.5]]).unwrap();
        let a = gaussian_sample(&[0.0, 1.0], &cov, 50, &mut stream(9)).unwrap();
        let b = gaussian_sample(&[0.0, 1.0], &cov, 50, &mut stream(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(7, 0), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 0), derive_seed(8, 0));
    }
}
