//! Trial containers, synthetic generation, preprocessing and fold planning.

pub mod filter;
pub mod folds;
pub mod store;
pub mod synth;

pub use filter::{bandpass, decimate, Sos};
pub use folds::{plan_client_folds, plan_folds, plan_folds_for_subjects, ClientFold, FoldPlan};
pub use store::{load_trials, save_trials, Provenance, Trial, TrialStore};
pub use synth::{generate, SynthSpec};
