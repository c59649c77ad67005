//! In-memory trial stores and the `FTR1` binary container.
//!
//! Layout, all little-endian: magic `FTR1`, channels `u32`, samples `u32`,
//! sample rate `f64`, trial count `u32`; then per trial the subject `u32`,
//! the label `u8` and `C x T` values as `f64`, channel-major.

use std::path::{Path, PathBuf};

use crate::error::{contract, LoadError, Result};
use crate::format::DatasetFormat;
use crate::tensor::Tensor4;

pub const MAGIC: [u8; 4] = *b"FTR1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub subject: usize,
    pub label: u8,
    /// `(1, 1, C, T)`.
    pub data: Tensor4,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Generated { seed: u64 },
    File(PathBuf),
    /// A preprocessing step applied to another store.
    Derived { step: String, from: Box<Provenance> },
}

/// Labelled trials of one client, all in that client's native format.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialStore {
    format: DatasetFormat,
    trials: Vec<Trial>,
    provenance: Provenance,
}

impl TrialStore {
    /// Checks every trial against the format, that subjects are `0..S`, and
    /// that each subject has trials of both classes.
    pub fn new(format: DatasetFormat, trials: Vec<Trial>, provenance: Provenance) -> Result<Self> {
        format.validate()?;
        let dims = [1, 1, format.channels, format.trial_samples];
        let mut seen = vec![[false; 2]; format.subjects];
        for (i, t) in trials.iter().enumerate() {
            if t.data.dims() != dims {
                return Err(contract(format!(
                    "{}: trial {i} has dims {:?}, format requires {dims:?}",
                    format.name,
                    t.data.dims()
                )));
            }
            if t.label > 1 {
                return Err(contract(format!("{}: trial {i} has label {}", format.name, t.label)));
            }
            let Some(s) = seen.get_mut(t.subject) else {
                return Err(contract(format!(
                    "{}: trial {i} names subject {} of {}",
                    format.name, t.subject, format.subjects
                )));
            };
            s[t.label as usize] = true;
        }
        if let Some(s) = seen.iter().position(|s| !(s[0] && s[1])) {
            return Err(contract(format!(
                "{}: subject {s} lacks trials of both classes",
                format.name
            )));
        }
        Ok(Self {
            format,
            trials,
            provenance,
        })
    }

    pub fn format(&self) -> &DatasetFormat {
        &self.format
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn subject_of_trials(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.subject).collect()
    }

    pub fn labels(&self, indices: &[usize]) -> Vec<u8> {
        indices.iter().map(|&i| self.trials[i].label).collect()
    }

    /// Stacks the selected trials into a `(B, 1, C, T)` batch.
    pub fn batch(&self, indices: &[usize]) -> (Tensor4, Vec<u8>) {
        let [c, t] = [self.format.channels, self.format.trial_samples];
        let mut data = Vec::with_capacity(indices.len() * c * t);
        for &i in indices {
            data.extend_from_slice(self.trials[i].data.data());
        }
        (Tensor4::from_raw([indices.len(), 1, c, t], data), self.labels(indices))
    }

    /// Same store with every trial transformed by `f`, which may change the format.
    pub(crate) fn map_trials(
        &self,
        format: DatasetFormat,
        step: String,
        mut f: impl FnMut(&Tensor4) -> Tensor4,
    ) -> Result<Self> {
        let trials = self
            .trials
            .iter()
            .map(|t| Trial {
                subject: t.subject,
                label: t.label,
                data: f(&t.data),
            })
            .collect();
        Self::new(
            format,
            trials,
            Provenance::Derived {
                step,
                from: Box::new(self.provenance.clone()),
            },
        )
    }
}

pub fn save_trials(store: &TrialStore, path: &Path) -> Result<()> {
    let f = store.format();
    let to_u32 = |v: usize, what: &str| {
        u32::try_from(v).map_err(|_| contract(format!("{what} {v} does not fit the container")))
    };
    let mut buf = Vec::with_capacity(HEADER_LEN + store.len() * (5 + 8 * f.channels * f.trial_samples));
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&to_u32(f.channels, "channel count")?.to_le_bytes());
    buf.extend_from_slice(&to_u32(f.trial_samples, "trial length")?.to_le_bytes());
    buf.extend_from_slice(&f.sample_rate.to_le_bytes());
    buf.extend_from_slice(&to_u32(store.len(), "trial count")?.to_le_bytes());
    for t in store.trials() {
        buf.extend_from_slice(&to_u32(t.subject, "subject id")?.to_le_bytes());
        buf.push(t.label);
        for v in t.data.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|source| {
        LoadError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Reads an `FTR1` file. The format takes the file stem as its name, the
/// subject count from the largest subject id, and the largest per-subject
/// trial count.
pub fn load_trials(path: &Path) -> Result<TrialStore> {
    let bytes = std::fs::read(path).map_err(|source| LoadError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let p = || path.to_path_buf();
    let truncated = |offset: usize, needed: usize| LoadError::Truncated {
        path: p(),
        offset,
        needed,
    };
    if bytes.len() < 4 {
        return Err(truncated(bytes.len(), 4 - bytes.len()).into());
    }
    if bytes[..4] != MAGIC {
        return Err(LoadError::BadMagic {
            path: p(),
            found: bytes[..4].try_into().unwrap(),
        }
        .into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(bytes.len(), HEADER_LEN - bytes.len()).into());
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let channels = u32_at(4);
    let samples = u32_at(8);
    let sample_rate = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let count = u32_at(20);
    let invalid = |reason: String| LoadError::Invalid { path: p(), reason };

    let record = channels
        .checked_mul(samples)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(5))
        .ok_or_else(|| invalid(format!("header shape {channels} x {samples} overflows")))?;
    let declared = count
        .checked_mul(record)
        .ok_or_else(|| invalid(format!("{count} trials of {record} bytes overflow")))?;
    let actual = bytes.len() - HEADER_LEN;
    if actual != declared {
        // whole records of another size mean the header disagrees with the payload
        let other_shape = count > 0 && actual % count == 0 && (actual / count) >= 5 && (actual / count - 5) % 8 == 0;
        if other_shape || actual > declared {
            return Err(LoadError::ShapeMismatch {
                path: p(),
                declared,
                actual,
            }
            .into());
        }
        return Err(truncated(bytes.len(), declared - actual).into());
    }

    let mut trials = Vec::with_capacity(count);
    let mut counts: Vec<usize> = Vec::new();
    let mut o = HEADER_LEN;
    for i in 0..count {
        let subject = u32_at(o);
        let label = bytes[o + 4];
        if label > 1 {
            return Err(invalid(format!("trial {i} has label {label}")).into());
        }
        let values = bytes[o + 5..o + record]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Tensor4::new([1, 1, channels, samples], values)
            .map_err(|e| invalid(format!("trial {i}: {e}")))?;
        if counts.len() <= subject {
            counts.resize(subject + 1, 0);
        }
        counts[subject] += 1;
        trials.push(Trial { subject, label, data });
        o += record;
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let format = DatasetFormat {
        name,
        channels,
        sample_rate,
        trial_samples: samples,
        subjects: counts.len(),
        trials_per_subject: counts.iter().copied().max().unwrap_or(0),
    };
    TrialStore::new(format, trials, Provenance::File(p())).map_err(|e| invalid(e.to_string()).into())
}
