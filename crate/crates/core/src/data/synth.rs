//! Synthetic two-class motor-imagery trials.
//!
//! Every channel carries pink background noise plus a rhythm at `rhythm_hz`.
//! In trials of class `y` the rhythm on the class-`y` informative channels is
//! attenuated by `depth`. Each subject draws one gain and one phase offset per
//! channel; each trial draws its own phase.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::format::DatasetFormat;
use crate::rng::{keyed_rng, Stream};
use crate::tensor::Tensor4;

use super::store::{Provenance, Trial, TrialStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub format: DatasetFormat,
    /// Channels attenuated in class 0 and class 1 trials.
    pub informative: [Vec<usize>; 2],
    #[serde(default = "default_rhythm")]
    pub rhythm_hz: f64,
    pub depth: f64,
    pub noise: f64,
    /// Scale of the per-subject gain (log-normal) and phase jitter.
    pub variability: f64,
    pub seed: u64,
}

fn default_rhythm() -> f64 {
    10.0
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        self.format.validate()?;
        let c = self.format.channels;
        for (class, set) in self.informative.iter().enumerate() {
            if let Some(bad) = set.iter().find(|&&i| i >= c) {
                return Err(contract(format!(
                    "{}: informative channel {bad} of class {class} is out of range 0..{c}",
                    self.format.name
                )));
            }
        }
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !(nonneg(self.depth) && self.depth <= 1.0) {
            return Err(contract(format!("{}: depth {} must lie in [0, 1]", self.format.name, self.depth)));
        }
        if !nonneg(self.noise) || !nonneg(self.variability) {
            return Err(contract(format!("{}: noise and variability must be >= 0", self.format.name)));
        }
        if !(self.rhythm_hz > 0.0 && self.rhythm_hz < self.format.sample_rate / 2.0) {
            return Err(contract(format!(
                "{}: rhythm {} Hz must lie below Nyquist",
                self.format.name, self.rhythm_hz
            )));
        }
        if self.format.trials_per_subject < 2 {
            return Err(contract(format!(
                "{}: need at least 2 trials per subject for both classes",
                self.format.name
            )));
        }
        Ok(())
    }
}

/// Approximately 1/f noise: white Gaussian noise through Kellet's economy
/// filter, scaled to roughly unit variance.
fn pink_noise(rng: &mut impl Rng, n: usize) -> impl Iterator<Item = f64> + '_ {
    let mut b = [0.0f64; 3];
    // discard the filter's start-up transient
    let warmup = 64;
    (0..n + warmup)
        .map(move |_| {
            let white: f64 = rng.sample(StandardNormal);
            b[0] = 0.99765 * b[0] + white * 0.099_046;
            b[1] = 0.963 * b[1] + white * 0.296_516_4;
            b[2] = 0.57 * b[2] + white * 1.052_691_3;
            (b[0] + b[1] + b[2] + white * 0.1848) * 0.25
        })
        .skip(warmup)
}

/// Deterministic per `spec.seed`; trial `i` of subject `s` has label `i % 2`.
pub fn generate(spec: &SynthSpec) -> Result<TrialStore> {
    spec.validate()?;
    let f = &spec.format;
    let (c, t) = (f.channels, f.trial_samples);
    let mut trials = Vec::with_capacity(f.total_trials());
    for s in 0..f.subjects {
        let mut rng = keyed_rng(Stream::Synth, &[spec.seed, s as u64]);
        let gain = (spec.variability * rng.sample::<f64, _>(StandardNormal)).exp();
        let phase: Vec<f64> = (0..c)
            .map(|_| spec.variability * PI * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for i in 0..f.trials_per_subject {
            let label = (i % 2) as u8;
            let mut rng = keyed_rng(Stream::Synth, &[spec.seed, s as u64, i as u64]);
            let trial_phase = rng.gen_range(0.0..2.0 * PI);
            let mut data = Vec::with_capacity(c * t);
            for (ch, &offset) in phase.iter().enumerate() {
                let amp = if spec.informative[label as usize].contains(&ch) {
                    1.0 - spec.depth
                } else {
                    1.0
                };
                let w = 2.0 * PI * spec.rhythm_hz / f.sample_rate;
                data.extend(
                    pink_noise(&mut rng, t)
                        .enumerate()
                        .map(|(j, n)| gain * (amp * (w * j as f64 + trial_phase + offset).sin() + spec.noise * n)),
                );
            }
            trials.push(Trial {
                subject: s,
                label,
                data: Tensor4::from_raw([1, 1, c, t], data),
            });
        }
    }
    TrialStore::new(f.clone(), trials, Provenance::Generated { seed: spec.seed })
}
