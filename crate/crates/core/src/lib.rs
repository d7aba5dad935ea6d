//! Workload classification from GPU telemetry.
//!
//! The crate covers the whole traditional-ML baseline pipeline: reading and
//! writing challenge archives (zip of `.npy` members), ingesting raw
//! telemetry CSVs, cutting fixed-length windows, standardizing, reducing each
//! trial to covariance or PCA features, training random forests, SMO support
//! vector machines and regularized gradient-boosted trees, and selecting
//! models by stratified k-fold grid search.
//!
//! A synthetic telemetry generator ([`synth`]) makes every stage runnable
//! without the released datasets.

pub mod classifiers;
pub mod dataset_io;
pub mod error;
pub mod features;
pub mod model_selection;
pub mod seed;
pub mod synth;
pub mod taxonomy;
pub mod windowing;

pub use error::{Error, Result};
