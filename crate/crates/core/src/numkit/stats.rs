use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Median of a slice; even counts average the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Ok(sorted[mid])
    } else {
        Ok(0.5 * (sorted[mid - 1] + sorted[mid]))
    }
}

/// Per-coordinate median of a point set (one point per row).
pub fn coordinate_median(points: &Matrix) -> Result<Vec<f64>> {
    if points.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    (0..points.cols())
        .map(|j| median(&points.column(j)))
        .collect()
}

/// Weighted first and second moments normalized by the point count:
///
/// mean = Σ ωᵢ xᵢ / n,  cov = Σ ωᵢ (xᵢ − mean)(xᵢ − mean)ᵀ / n
///
/// The normalizer is `n`, not `Σ ωᵢ`, so weights below one shrink both.
pub fn weighted_moments(points: &Matrix, weights: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    let n = points.rows();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            got: weights.len(),
        });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !(**w >= 0.0)) {
        return Err(Error::NegativeWeight { index, value });
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let d = points.cols();
    let inv_n = 1.0 / n as f64;

    let mut mean = vec![0.0; d];
    for (row, &w) in points.row_iter().zip(weights) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m *= inv_n);

    let mut cov = Matrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (row, &w) in points.row_iter().zip(weights) {
        for ((c, &x), &m) in centered.iter_mut().zip(row).zip(&mean) {
            *c = x - m;
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
            let v = cov[(i, j)] * inv_n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok((mean, cov))
}

/// Unweighted mean and population covariance (1/n normalization).
pub fn empirical_moments(points: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    weighted_moments(points, &vec![1.0; points.rows()])
}

pub fn column_means(points: &Matrix) -> Result<Vec<f64>> {
    if points.rows() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut mean = vec![0.0; points.cols()];
    for row in points.row_iter() {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    let inv_n = 1.0 / points.rows() as f64;
    mean.iter_mut().for_each(|m| *m *= inv_n);
    Ok(mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            coordinate_median(&pts(&[&[1.0, 5.0], &[2.0, 4.0], &[3.0, 3.0]])).unwrap(),
            vec![2.0, 4.0]
        );
        assert_eq!(coordinate_median(&pts(&[&[7.0]])).unwrap(), vec![7.0]);
        assert_eq!(coordinate_median(&pts(&[&[1.0], &[3.0]])).unwrap(), vec![2.0]);
    }

    #[test]
    fn median_empty_errors() {
        let empty = Matrix::zeros(0, 3);
        assert!(matches!(coordinate_median(&empty), Err(Error::EmptyInput)));
        assert_eq!(Error::EmptyInput.to_string(), "empty input");
    }

    #[test]
    fn single_point_moments() {
        let (m, c) = weighted_moments(&pts(&[&[1.5, -2.0]]), &[1.0]).unwrap();
        assert_eq!(m, vec![1.5, -2.0]);
        assert_eq!(c, Matrix::zeros(2, 2));
    }

    #[test]
    fn two_points_with_zero_weight() {
        // mean = (1·a + 0·b)/2 = a/2; cov = 1·(a − a/2)(a − a/2)ᵀ/2 = a aᵀ/8
        let a = [2.0, 4.0];
        let (m, c) = weighted_moments(&pts(&[&a, &[10.0, -6.0]]), &[1.0, 0.0]).unwrap();
        assert_eq!(m, vec![1.0, 2.0]);
        let expected = pts(&[&[0.5, 1.0], &[1.0, 2.0]]);
        assert_eq!(c, expected);
    }

    #[test]
    fn moment_errors() {
        let p = pts(&[&[1.0], &[2.0]]);
        assert!(matches!(
            weighted_moments(&p, &[1.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            weighted_moments(&p, &[1.0, -0.5]),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
    }

    #[test]
    fn uniform_weights_match_population_estimators() {
        let p = pts(&[&[0.0, 1.0], &[2.0, 3.0], &[4.0, -1.0]]);
        let (m, c) = empirical_moments(&p).unwrap();
        assert_eq!(m, vec![2.0, 1.0]);
        // hand-computed population covariance
        let expected = [[8.0 / 3.0, -4.0 / 3.0], [-4.0 / 3.0, 8.0 / 3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((c[(i, j)] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    proptest! {
        #[test]
        fn median_permutation_invariant_and_translation_equivariant(
            rows in prop::collection::vec(prop::collection::vec(-100.0..100.0f64, 3), 1..30),
            shift in prop::collection::vec(-50.0..50.0f64, 3),
            rot in 0usize..30,
        ) {
            let p = Matrix::from_rows(&rows).unwrap();
            let base = coordinate_median(&p).unwrap();

            let mut permuted = rows.clone();
            let r = rot % permuted.len();
            permuted.rotate_left(r);
            permuted.reverse();
            prop_assert_eq!(coordinate_median(&Matrix::from_rows(&permuted).unwrap()).unwrap(), base.clone());

            let shifted: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&shift).map(|(x, c)| x + c).collect())
                .collect();
            let moved = coordinate_median(&Matrix::from_rows(&shifted).unwrap()).unwrap();
            for j in 0..3 {
                prop_assert!((moved[j] - (base[j] + shift[j])).abs() < 1e-9);
            }
        }
    }
}
