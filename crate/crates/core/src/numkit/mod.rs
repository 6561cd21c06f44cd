//! Dense numerical primitives shared by the other modules.

mod eigen;
mod gaussian;
mod matrix;
mod stats;

pub use eigen::{spectral_norm, sym_eig, EigenPair, MAX_SWEEPS, OFF_DIAGONAL_TOL, SYMMETRY_TOL};
pub use gaussian::{
    check_psd, derive_seed, derived_stream, gaussian_sample, sqrt_factor, stream, Stream, PSD_TOL,
};
pub(crate) use gaussian::sample_with_factor;
pub use matrix::{cholesky, cholesky_solve, dot, norm1, norm2, sub, Matrix};
pub use stats::{coordinate_median, column_means, empirical_moments, median, weighted_moments};
