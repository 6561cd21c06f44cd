//! Synthetic Gaussian-mixture data with analytic posteriors, instance- and
//! class-dependent label corruption, and Huber-contaminated point sets.

mod dataset;
mod huber;
mod noise;
mod oracle;

pub use dataset::{
    format_f64, read_dataset_csv, read_dataset_file, read_points_csv, write_dataset_csv, write_dataset_file,
    write_labeled_csv, write_points_csv, DatasetTable, LabeledSet, NoisyDataset, TrainingSet,
};
#[cfg(test)]
pub(crate) use dataset::select_rows;
pub use huber::{huber_mixture, ContaminatedSample, OutlierSampler, PointMass, ShiftAndScatter};
pub use noise::{
    class_transition_matrix, corrupt, flip_probability, pmd_flip, resolve_scale, ClassNoise, ClassSampling, NoiseSpec,
    PmdConstants, PmdType, ScaleResolution, TransitionKind, SCALE_TOLERANCE,
};
pub use oracle::{argmax, softmax, top_two, MixtureOracle};
