//! Recursive robust mean estimation under Huber contamination.
//!
//! Each level damps points far from the coordinate-wise median, splits the
//! space into the top and bottom halves of the weighted covariance spectrum,
//! takes the plain mean in the bottom half and recurses in the top half. A
//! single remaining dimension falls back to the median.

use crate::error::{Error, Result};
use crate::numkit::{
    column_means, coordinate_median, empirical_moments, median, sym_eig, weighted_moments, Matrix,
};

/// Outlier-damping weights about the coordinate-wise median.
#[derive(Debug, Clone, PartialEq)]
pub struct DampingResult {
    pub weights: Vec<f64>,
    pub median: Vec<f64>,
    /// C · trace of the unweighted covariance.
    pub s_squared: f64,
}

/// Orthonormal bases of the top `⌈d/2⌉` and bottom `⌊d/2⌋` principal
/// directions.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceSplit {
    pub v_basis: Matrix,
    pub w_basis: Matrix,
}

/// ωᵢ = exp(−‖xᵢ − m‖² / s²) with s² = C·tr(Σ_S).
///
/// A point set with zero spread gets unit weights.
pub fn outlier_damping(points: &Matrix, damping_constant: f64) -> Result<DampingResult> {
    if points.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    if !(damping_constant > 0.0) {
        return Err(Error::invalid(format!("damping constant {damping_constant} must be positive")));
    }
    let median = coordinate_median(points)?;
    let (_, cov) = empirical_moments(points)?;
    let s_squared = damping_constant * cov.trace();
    let weights = if s_squared > 0.0 {
        points
            .row_iter()
            .map(|x| {
                let dist2: f64 = x.iter().zip(&median).map(|(a, b)| (a - b) * (a - b)).sum();
                (-dist2 / s_squared).exp()
            })
            .collect()
    } else {
        vec![1.0; points.rows()]
    };
    Ok(DampingResult {
        weights,
        median,
        s_squared,
    })
}

pub fn split_projection(weighted_cov: &Matrix) -> Result<SubspaceSplit> {
    let d = weighted_cov.rows();
    if d < 2 {
        return Err(Error::invalid(format!("cannot split a {d}-dimensional space")));
    }
    let eig = sym_eig(weighted_cov)?;
    let top = d.div_ceil(2);
    Ok(SubspaceSplit {
        v_basis: eig.vectors.columns(0..top),
        w_basis: eig.vectors.columns(top..d),
    })
}

/// Default C. Smaller values hide a moderately shifted outlier cluster from
/// the weighted covariance, which then sends its direction into W.
pub const DEFAULT_DAMPING_CONSTANT: f64 = 2.0;

/// Configured estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgnosticMean {
    /// C in s² = C·tr(Σ_S).
    pub damping_constant: f64,
    /// With damping off every weight is 1; kept for mutation checks.
    pub damping: bool,
}

impl Default for AgnosticMean {
    fn default() -> Self {
        Self {
            damping_constant: DEFAULT_DAMPING_CONSTANT,
            damping: true,
        }
    }
}

impl AgnosticMean {
    pub fn with_constant(damping_constant: f64) -> Self {
        Self {
            damping_constant,
            ..Self::default()
        }
    }

    pub fn without_damping() -> Self {
        Self {
            damping: false,
            ..Self::default()
        }
    }

    pub fn estimate(&self, points: &Matrix) -> Result<Vec<f64>> {
        let mut dims = Vec::new();
        self.recurse(points, &mut dims)
    }

    /// Estimate plus the dimension visited at each recursion level.
    pub fn estimate_traced(&self, points: &Matrix) -> Result<(Vec<f64>, Vec<usize>)> {
        let mut dims = Vec::new();
        let mean = self.recurse(points, &mut dims)?;
        Ok((mean, dims))
    }

    /// Damping weights of the top level, all ones when damping is off.
    pub fn weights(&self, points: &Matrix) -> Result<DampingResult> {
        let mut res = outlier_damping(points, self.damping_constant)?;
        if !self.damping {
            res.weights.iter_mut().for_each(|w| *w = 1.0);
        }
        Ok(res)
    }

    fn recurse(&self, points: &Matrix, dims: &mut Vec<usize>) -> Result<Vec<f64>> {
        let d = points.cols();
        if points.rows() == 0 {
            return Err(Error::EmptyInput);
        }
        if d == 0 {
            return Err(Error::invalid("dimension 0"));
        }
        dims.push(d);
        if d == 1 {
            return Ok(vec![median(points.as_slice())?]);
        }

        let damping = self.weights(points)?;
        if damping.s_squared == 0.0 {
            return Ok(points.row(0).to_vec());
        }

        // Weighted moments about the median keep every step translation
        // equivariant; the 1/n normalization would otherwise pick up the
        // location of the origin.
        let mut centered = points.clone();
        for i in 0..centered.rows() {
            for (x, m) in centered.row_mut(i).iter_mut().zip(&damping.median) {
                *x -= m;
            }
        }
        let (_, weighted_cov) = weighted_moments(&centered, &damping.weights)?;
        let split = split_projection(&weighted_cov)?;

        let in_v = points.matmul(&split.v_basis)?;
        let in_w = points.matmul(&split.w_basis)?;
        let mean_v = self.recurse(&in_v, dims)?;
        let mean_w = column_means(&in_w)?;

        let mut mean = split.v_basis.matvec(&mean_v)?;
        for (m, x) in mean.iter_mut().zip(split.w_basis.matvec(&mean_w)?) {
            *m += x;
        }
        Ok(mean)
    }
}

/// Robust mean with the default damping constant.
pub fn agnostic_mean(points: &Matrix) -> Result<Vec<f64>> {
    AgnosticMean::default().estimate(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibrate::GaussianClassModel;
    use crate::noisegen::{huber_mixture, PointMass, ShiftAndScatter};
    use crate::numkit::{norm2, stream, sub};
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn one_dim_is_the_median() {
        let p = pts(&[&[1.0], &[2.0], &[3.0], &[100.0]]);
        assert_eq!(agnostic_mean(&p).unwrap(), vec![2.5]);
    }

    #[test]
    fn errors() {
        assert!(matches!(agnostic_mean(&Matrix::zeros(0, 3)), Err(Error::EmptyInput)));
        assert!(agnostic_mean(&Matrix::zeros(4, 0)).is_err());
    }

    #[test]
    fn identical_points_return_the_point() {
        let p = Matrix::from_rows(&[[1.0, 2.0, 3.0]; 5]).unwrap();
        assert_eq!(agnostic_mean(&p).unwrap(), vec![1.0, 2.0, 3.0]);
        let dr = outlier_damping(&p, 1.0).unwrap();
        assert!(dr.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn damping_weights() {
        // median (0, 0); population variances (2/3, 0) → s² = 2/3
        let p = pts(&[&[-1.0, 0.0], &[0.0, 0.0], &[1.0, 0.0]]);
        let dr = outlier_damping(&p, 1.0).unwrap();
        assert_eq!(dr.median, vec![0.0, 0.0]);
        assert_eq!(dr.weights[1], 1.0);
        assert_eq!(dr.weights[0], dr.weights[2]);
        assert!((dr.s_squared - 2.0 / 3.0).abs() < 1e-15);
        assert!((dr.weights[0] - (-1.5f64).exp()).abs() < 1e-15);

        // C = 1.5 puts the outer points at squared distance exactly s²
        let dr = outlier_damping(&p, 1.5).unwrap();
        assert!((dr.weights[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn split_examples() {
        let s = split_projection(&Matrix::from_diag(&[4.0, 3.0, 2.0, 1.0])).unwrap();
        assert_eq!(s.v_basis, Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]]).unwrap());
        assert_eq!(s.w_basis, Matrix::from_rows(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap());

        let s = split_projection(&Matrix::from_diag(&[2.0, 1.0])).unwrap();
        assert_eq!(s.v_basis.column(0), vec![1.0, 0.0]);
        assert_eq!(s.w_basis.column(0), vec![0.0, 1.0]);

        let s = split_projection(&Matrix::from_diag(&[1.0, 3.0, 2.0])).unwrap();
        assert_eq!((s.v_basis.cols(), s.w_basis.cols()), (2, 1));
        assert!(split_projection(&Matrix::identity(1)).is_err());
    }

    #[test]
    fn split_bases_are_complementary() {
        let a = Matrix::from_rows(&[[2.0, 0.5, 0.1], [0.5, 1.0, 0.3], [0.1, 0.3, 0.7]]).unwrap();
        let s = split_projection(&a).unwrap();
        let mut full = Matrix::zeros(3, 3);
        for i in 0..3 {
            full[(i, 0)] = s.v_basis[(i, 0)];
            full[(i, 1)] = s.v_basis[(i, 1)];
            full[(i, 2)] = s.w_basis[(i, 0)];
        }
        let gram = full.transpose().matmul(&full).unwrap();
        assert!(gram.sub(&Matrix::identity(3)).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn recursion_dimension_sequence() {
        let mut rng = stream(1);
        let model = GaussianClassModel::new(0, vec![0.0; 11], Matrix::identity(11), 1).unwrap();
        let p = model.sample(200, &mut rng).unwrap();
        let (_, dims) = AgnosticMean::default().estimate_traced(&p).unwrap();
        assert_eq!(dims, vec![11, 6, 3, 2, 1]);
        // ⌈log₂ 11⌉ = 4 splits below the top level
        assert_eq!(dims.len() - 1, 4);
    }

    #[test]
    fn beats_the_empirical_mean_under_contamination() {
        let d = 16;
        let truth = vec![0.0; d];
        let model = GaussianClassModel::new(0, truth.clone(), Matrix::identity(d), 1).unwrap();
        let mut shift = truth.clone();
        shift[0] = 10.0;
        let mut wins = 0;
        for seed in 0..20 {
            let s = huber_mixture(&model, &PointMass(shift.clone()), 0.2, 2000, &mut stream(seed)).unwrap();
            let robust = agnostic_mean(&s.points).unwrap();
            let empirical = column_means(&s.points).unwrap();
            if norm2(&sub(&robust, &truth)) < norm2(&sub(&empirical, &truth)) {
                wins += 1;
            }
        }
        assert_eq!(wins, 20);
    }

    #[test]
    fn damping_matters_when_outliers_scatter() {
        let d = 16;
        let truth = vec![0.0; d];
        let model = GaussianClassModel::new(0, truth.clone(), Matrix::identity(d), 1).unwrap();
        let mut shift = truth.clone();
        shift[0] = 10.0;
        let outliers = ShiftAndScatter { shift, spread: 50.0 };
        let (mut damped, mut undamped) = (0.0, 0.0);
        for seed in 0..10 {
            let s = huber_mixture(&model, &outliers, 0.2, 2000, &mut stream(seed)).unwrap();
            damped += norm2(&AgnosticMean::default().estimate(&s.points).unwrap());
            undamped += norm2(&AgnosticMean::without_damping().estimate(&s.points).unwrap());
        }
        // the shifted half alone moves the plain mean by 0.1·10 = 1
        assert!(damped / 10.0 < 0.6, "{damped}");
        assert!(undamped / 10.0 > 0.8, "{undamped}");
    }

    #[test]
    fn undamped_weights_converge_to_empirical_mean() {
        let d = 4;
        let model = GaussianClassModel::new(0, vec![1.0, -2.0, 0.5, 3.0], Matrix::identity(d), 1).unwrap();
        let p = model.sample(100_000, &mut stream(7)).unwrap();
        let est = AgnosticMean::without_damping().estimate(&p).unwrap();
        let emp = column_means(&p).unwrap();
        assert!(norm2(&sub(&est, &emp)) <= 0.05);
    }

    #[test]
    fn weights_strictly_decrease_with_distance() {
        let p = pts(&[&[0.0, 0.0], &[0.1, 0.0], &[0.5, 0.5], &[2.0, -1.0], &[-3.0, 4.0]]);
        let dr = outlier_damping(&p, 1.0).unwrap();
        let mut by_dist: Vec<(f64, f64)> = p
            .row_iter()
            .zip(&dr.weights)
            .map(|(x, &w)| (norm2(&sub(x, &dr.median)), w))
            .collect();
        by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        for pair in by_dist.windows(2) {
            if pair[1].0 > pair[0].0 {
                assert!(pair[1].1 < pair[0].1);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn translation_equivariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 4), 8..40),
            shift in prop::collection::vec(-20.0..20.0f64, 4),
        ) {
            let p = Matrix::from_rows(&rows).unwrap();
            let moved: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&shift).map(|(x, c)| x + c).collect())
                .collect();
            let a = agnostic_mean(&p).unwrap();
            let b = agnostic_mean(&Matrix::from_rows(&moved).unwrap()).unwrap();
            for j in 0..4 {
                prop_assert!((b[j] - (a[j] + shift[j])).abs() < 1e-8, "coord {}: {} vs {}", j, b[j], a[j] + shift[j]);
            }
        }

        #[test]
        fn permutation_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 3), 5..30),
        ) {
            let p = Matrix::from_rows(&rows).unwrap();
            let mut rev = rows.clone();
            rev.reverse();
            let a = agnostic_mean(&p).unwrap();
            let b = agnostic_mean(&Matrix::from_rows(&rev).unwrap()).unwrap();
            for j in 0..3 {
                prop_assert!((a[j] - b[j]).abs() < 1e-9);
            }
        }
    }
}
