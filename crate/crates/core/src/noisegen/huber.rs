use rand::seq::SliceRandom;
use rand::Rng;

use crate::calibrate::GaussianClassModel;
use crate::error::{Error, Result};
use crate::numkit::{Matrix, Stream};

/// Source of contaminating points.
pub trait OutlierSampler {
    fn dim(&self) -> usize;
    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Matrix>;
}

/// Every outlier at the same location.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass(pub Vec<f64>);

impl OutlierSampler for PointMass {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn draw(&self, n: usize, _rng: &mut Stream) -> Result<Matrix> {
        Matrix::from_rows(&vec![self.0.clone(); n]).or_else(|_| Ok(Matrix::zeros(0, self.0.len())))
    }
}

impl OutlierSampler for GaussianClassModel {
    fn dim(&self) -> usize {
        GaussianClassModel::dim(self)
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Matrix> {
        self.sample(n, rng)
    }
}

/// Half the outliers sit at `shift`; the other half are scattered at
/// `±spread·e_j` along axes where `shift` is zero, with random axis and sign.
/// The scattered half has no mean but inflates variance in many directions,
/// so an undamped covariance ranks the shift direction low.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftAndScatter {
    pub shift: Vec<f64>,
    pub spread: f64,
}

impl OutlierSampler for ShiftAndScatter {
    fn dim(&self) -> usize {
        self.shift.len()
    }

    fn draw(&self, n: usize, rng: &mut Stream) -> Result<Matrix> {
        let d = self.shift.len();
        let axes: Vec<usize> = (0..d).filter(|&j| self.shift[j] == 0.0).collect();
        if axes.is_empty() {
            return Err(Error::invalid("shift leaves no free axis to scatter along"));
        }
        let mut m = Matrix::zeros(n, d);
        for i in 0..n {
            let row = m.row_mut(i);
            if i % 2 == 0 {
                row.copy_from_slice(&self.shift);
            } else {
                let j = axes[rng.random_range(0..axes.len())];
                row[j] = if rng.random::<bool>() { self.spread } else { -self.spread };
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct ContaminatedSample {
    pub points: Matrix,
    /// Ground truth, for evaluation only.
    pub inlier_mask: Vec<bool>,
}

impl ContaminatedSample {
    pub fn outlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| !m).count()
    }
}

/// Draws `n` points of which exactly `round(ε n)` come from `outliers` and
/// the rest from `inlier`, in shuffled order.
pub fn huber_mixture(
    inlier: &GaussianClassModel,
    outliers: &dyn OutlierSampler,
    epsilon: f64,
    n: usize,
    rng: &mut Stream,
) -> Result<ContaminatedSample> {
    if !(0.0..0.5).contains(&epsilon) {
        return Err(Error::invalid(format!("contamination fraction {epsilon} outside [0, 0.5)")));
    }
    if outliers.dim() != inlier.dim() {
        return Err(Error::DimensionMismatch {
            expected: inlier.dim(),
            got: outliers.dim(),
        });
    }
    let n_out = (epsilon * n as f64).round() as usize;
    let n_in = n - n_out;
    let good = inlier.sample(n_in, rng)?;
    let bad = outliers.draw(n_out, rng)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let d = inlier.dim();
    let mut points = Matrix::zeros(n, d);
    let mut inlier_mask = vec![true; n];
    for (src, &dst) in order.iter().enumerate() {
        let row = if src < n_in {
            good.row(src)
        } else {
            inlier_mask[dst] = false;
            bad.row(src - n_in)
        };
        points.row_mut(dst).copy_from_slice(row);
    }
    Ok(ContaminatedSample {
        points,
        inlier_mask,
    })
}
