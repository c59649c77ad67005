//! Zero-phase Butterworth band-pass filtering and integer decimation.

use std::f64::consts::PI;

use crate::arch::MIN_TRIAL_SAMPLES;
use crate::error::{contract, Result};
use crate::tensor::Tensor4;

use super::store::TrialStore;

/// Order of the high-pass edge.
pub const HIGHPASS_ORDER: usize = 4;
/// Order of the low-pass edge.
pub const LOWPASS_ORDER: usize = 8;

/// Cascade of second-order sections `[b0, b1, b2, 1, a1, a2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sos {
    pub sections: Vec<[f64; 6]>,
}

#[derive(Clone, Copy)]
enum Edge {
    Low,
    High,
}

/// Bilinear-transform biquad with the cutoff prewarped to `fc`.
fn biquad(edge: Edge, fc: f64, fs: f64, q: f64) -> [f64; 6] {
    let w0 = 2.0 * PI * fc / fs;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let a0 = 1.0 + alpha;
    let b = match edge {
        Edge::Low => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
        Edge::High => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
    };
    [b[0] / a0, b[1] / a0, b[2] / a0, 1.0, -2.0 * cos / a0, (1.0 - alpha) / a0]
}

/// Butterworth sections of an even `order`, one per conjugate pole pair.
fn butter_sections(edge: Edge, order: usize, fc: f64, fs: f64) -> impl Iterator<Item = [f64; 6]> {
    (0..order / 2).map(move |k| {
        let q = 1.0 / (2.0 * ((2 * k + 1) as f64 * PI / (2 * order) as f64).sin());
        biquad(edge, fc, fs, q)
    })
}

impl Sos {
    /// High-pass at `low` followed by low-pass at `high`.
    pub fn butter_bandpass(low: f64, high: f64, sample_rate: f64) -> Result<Self> {
        if !(low > 0.0 && low < high && high < sample_rate / 2.0) {
            return Err(contract(format!(
                "band {low}-{high} Hz must satisfy 0 < low < high < {} Hz (Nyquist)",
                sample_rate / 2.0
            )));
        }
        let sections = butter_sections(Edge::Low, LOWPASS_ORDER, high, sample_rate)
            .chain(butter_sections(Edge::High, HIGHPASS_ORDER, low, sample_rate))
            .collect();
        Ok(Self { sections })
    }

    /// Causal filtering from zero state, transposed direct form II.
    pub fn filter_in_place(&self, x: &mut [f64]) {
        for &[b0, b1, b2, _, a1, a2] in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in x.iter_mut() {
                let input = *v;
                let out = b0 * input + z1;
                z1 = b1 * input - a1 * out + z2;
                z2 = b2 * input - a2 * out;
                *v = out;
            }
        }
    }

    /// Forward-backward filtering of a de-meaned signal.
    ///
    /// Each side is padded with the even reflection of up to `n - 1` samples,
    /// faded in with a half-Hann window.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let pad = n - 1;
        let fade = |i: usize| 0.5 - 0.5 * (PI * i as f64 / pad as f64).cos();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((0..pad).map(|i| (x[pad - i] - mean) * fade(i)));
        ext.extend(x.iter().map(|v| v - mean));
        ext.extend((0..pad).map(|i| (x[n - 2 - i] - mean) * fade(pad - 1 - i)));
        self.filter_in_place(&mut ext);
        ext.reverse();
        self.filter_in_place(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Zero-phase band-pass of every channel of every trial; length is unchanged.
pub fn bandpass(store: &TrialStore, low: f64, high: f64) -> Result<TrialStore> {
    let format = store.format().clone();
    let sos = Sos::butter_bandpass(low, high, format.sample_rate)?;
    let t = format.trial_samples;
    store.map_trials(format.clone(), format!("bandpass {low}-{high} Hz"), |trial| {
        let mut out = Vec::with_capacity(trial.len());
        for channel in trial.data().chunks_exact(t) {
            out.extend(sos.filtfilt(channel));
        }
        Tensor4::from_raw(trial.dims(), out)
    })
}

/// Keeps every `factor`-th sample starting at index 0.
pub fn decimate(store: &TrialStore, factor: usize) -> Result<TrialStore> {
    if factor < 1 {
        return Err(contract("decimation factor must be >= 1"));
    }
    let mut format = store.format().clone();
    let t = format.trial_samples;
    let kept = t.div_ceil(factor);
    if factor > 1 && kept < MIN_TRIAL_SAMPLES {
        return Err(contract(format!(
            "decimating {t} samples by {factor} leaves {kept}, below {MIN_TRIAL_SAMPLES}"
        )));
    }
    format.trial_samples = kept;
    format.sample_rate /= factor as f64;
    store.map_trials(format.clone(), format!("decimate x{factor}"), |trial| {
        let out = trial
            .data()
            .chunks_exact(t)
            .flat_map(|channel| channel.iter().step_by(factor).copied())
            .collect();
        Tensor4::from_raw([1, 1, format.channels, kept], out)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rms(x: &[f64]) -> f64 {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }

    fn sine(f: f64, fs: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * f * i as f64 / fs).sin()).collect()
    }

    #[test]
    fn sections_have_unit_gain_in_their_passbands() {
        let sos = Sos::butter_bandpass(0.3, 40.0, 250.0).unwrap();
        assert_eq!(sos.sections.len(), (LOWPASS_ORDER + HIGHPASS_ORDER) / 2);
        // low-pass sections pass DC exactly, high-pass sections pass Nyquist
        for s in &sos.sections[..LOWPASS_ORDER / 2] {
            let dc = (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
            assert!((dc - 1.0).abs() < 1e-12);
        }
        for s in &sos.sections[LOWPASS_ORDER / 2..] {
            let nyq = (s[0] - s[1] + s[2]) / (1.0 - s[4] + s[5]);
            assert!((nyq - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn band_outside_nyquist_rejected() {
        assert!(Sos::butter_bandpass(0.3, 130.0, 250.0).is_err());
        assert!(Sos::butter_bandpass(0.0, 40.0, 250.0).is_err());
        assert!(Sos::butter_bandpass(40.0, 0.3, 250.0).is_err());
    }

    #[test]
    fn passband_sine_survives() {
        let sos = Sos::butter_bandpass(0.3, 40.0, 250.0).unwrap();
        let x = sine(10.0, 250.0, 1000);
        let ratio = rms(&sos.filtfilt(&x)) / rms(&x);
        assert!((ratio - 1.0).abs() < 0.1, "{ratio}");
    }

    #[test]
    fn length_preserved_for_tiny_inputs() {
        let sos = Sos::butter_bandpass(0.3, 40.0, 250.0).unwrap();
        for n in 0..4 {
            assert_eq!(sos.filtfilt(&vec![1.0; n]).len(), n);
        }
    }
}
