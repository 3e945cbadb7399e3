//! Synthetic downscaling benchmark data.

pub mod dataset;
pub mod grf;
pub mod standardize;

pub use dataset::{
    coarsen, generate_dataset, DatasetMetadata, DownscalingDataset, SynthConfig, SCALE_FACTOR,
};
pub use grf::generate_gaussian_random_field;
pub use standardize::{compute_standardization, standardize_predictors, StandardizationStats};
