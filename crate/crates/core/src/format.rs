use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Native trial format of one client's dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetFormat {
    pub name: String,
    pub channels: usize,
    /// Hz.
    pub sample_rate: f64,
    pub trial_samples: usize,
    pub subjects: usize,
    pub trials_per_subject: usize,
}

impl DatasetFormat {
    pub fn new(
        name: impl Into<String>,
        channels: usize,
        sample_rate: f64,
        trial_samples: usize,
        subjects: usize,
        trials_per_subject: usize,
    ) -> Result<Self> {
        let f = Self {
            name: name.into(),
            channels,
            sample_rate,
            trial_samples,
            subjects,
            trials_per_subject,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.trial_samples == 0 || self.subjects == 0 || self.trials_per_subject == 0 {
            return Err(contract(format!("format {}: all counts must be >= 1", self.name)));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(contract(format!("format {}: sample rate must be positive", self.name)));
        }
        Ok(())
    }

    /// Trial length in seconds.
    pub fn duration(&self) -> f64 {
        self.trial_samples as f64 / self.sample_rate
    }

    /// Per-sample input shape `(1, C, T)`.
    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.channels, self.trial_samples]
    }

    pub fn total_trials(&self) -> usize {
        self.subjects * self.trials_per_subject
    }
}
