//! Hierarchical personalized federated learning for EEG datasets whose trials
//! come in different channel counts, sampling rates and lengths.
//!
//! Each client pairs a format-specific local encoder with a global classifier
//! whose weights are averaged across clients by training-sample count.

pub mod arch;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod federation;
pub mod format;
pub mod gradcheck;
pub mod harness;
pub mod layers;
pub mod model;
pub mod network;
pub mod rng;
pub mod tensor;
pub mod weights;

mod gemm;

pub use arch::{build_from_table, derive_arch, GlobalArch, LocalArch};
pub use error::{Error, LoadError, Result};
pub use format::DatasetFormat;
pub use model::PersonalizedModel;
pub use tensor::Tensor4;
pub use weights::{sgd_step, WeightEntry, WeightSet};
