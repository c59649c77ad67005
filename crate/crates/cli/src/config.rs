//! Run configuration files (TOML).

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use fleeg_core::arch::{derive_arch, table_row};
use fleeg_core::data::{bandpass, decimate, generate, load_trials, SynthSpec, TrialStore};
use fleeg_core::federation::{ClientHyper, TrainConfig};
use fleeg_core::rng::{derive_seed, Stream};
use fleeg_core::{DatasetFormat, GlobalArch, LocalArch, PersonalizedModel};
use serde::Deserialize;
use sha2::{Digest, Sha256};

pub const TIMEOUT_ENV: &str = "FLEEG_ROUND_TIMEOUT_MS";

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub rounds: usize,
    #[serde(default = "one")]
    pub local_epochs: usize,
    /// Default output directory, relative to the config file.
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub network: NetworkConfig,
    #[serde(rename = "client", default)]
    pub clients: Vec<ClientConfig>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default = "default_address")]
    pub address: String,
    #[serde(default = "default_timeout_ms")]
    pub round_timeout_ms: u64,
    #[serde(default = "default_timeout_ms")]
    pub join_timeout_ms: u64,
}

fn default_address() -> String {
    "127.0.0.1:7878".into()
}

fn default_timeout_ms() -> u64 {
    60_000
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            address: default_address(),
            round_timeout_ms: default_timeout_ms(),
            join_timeout_ms: default_timeout_ms(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub name: String,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    /// Generate trials from this spec.
    pub synth: Option<SynthBlock>,
    /// Load trials from an `FTR1` file, relative to the config file.
    pub trials: Option<PathBuf>,
    /// A published configuration by name; shape checks only, no data.
    pub table: Option<String>,
    pub preprocess: Option<Preprocess>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthBlock {
    pub channels: usize,
    pub sample_rate: f64,
    pub trial_samples: usize,
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub informative: [Vec<usize>; 2],
    #[serde(default = "default_rhythm")]
    pub rhythm_hz: f64,
    pub depth: f64,
    pub noise: f64,
    pub variability: f64,
    /// Defaults to a seed derived from the run seed and the client position.
    pub seed: Option<u64>,
}

fn default_rhythm() -> f64 {
    10.0
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    /// `[low, high]` in Hz.
    pub bandpass: Option<[f64; 2]>,
    pub decimate: Option<usize>,
}

#[derive(Clone, Debug)]
pub enum Source {
    Synth(SynthSpec),
    File(PathBuf),
    ShapeOnly,
}

#[derive(Clone, Debug)]
pub struct Client {
    pub name: String,
    /// Format of the trials the model sees, after preprocessing.
    pub format: DatasetFormat,
    pub source: Source,
    pub hyper: ClientHyper,
    pub preprocess: Option<Preprocess>,
    pub arch: LocalArch,
}

impl Client {
    /// Builds the client's trial store, preprocessed.
    pub fn prepare(&self) -> anyhow::Result<TrialStore> {
        let mut store = match &self.source {
            Source::Synth(spec) => generate(spec)?,
            Source::File(path) => load_trials(path)?,
            Source::ShapeOnly => bail!("client {} has no trial data (shape-only table entry)", self.name),
        };
        if let Some(p) = &self.preprocess {
            if let Some([lo, hi]) = p.bandpass {
                store = bandpass(&store, lo, hi)?;
            }
            if let Some(f) = p.decimate {
                store = decimate(&store, f)?;
            }
        }
        if store.format().name != self.name {
            let mut format = store.format().clone();
            format.name = self.name.clone();
            store = TrialStore::new(format, store.trials().to_vec(), store.provenance().clone())?;
        }
        if store.format() != &self.format {
            bail!(
                "client {}: trials have format {:?}, configuration resolves to {:?}",
                self.name,
                store.format(),
                self.format
            );
        }
        Ok(store)
    }

    /// A freshly initialized model for client id `k`.
    pub fn model(&self, seed: u64, k: usize) -> anyhow::Result<PersonalizedModel> {
        Ok(PersonalizedModel::new(
            self.arch.clone(),
            GlobalArch::default(),
            self.format.trial_samples,
            seed,
            k as u64,
        )?)
    }

    pub fn has_data(&self) -> bool {
        !matches!(self.source, Source::ShapeOnly)
    }
}

/// A validated configuration with every client's format resolved.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub raw: RunConfig,
    pub dir: PathBuf,
    /// SHA-256 of the file bytes.
    pub hash: String,
    pub clients: Vec<Client>,
}

fn check_name(name: &str) -> anyhow::Result<()> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
        bail!("client name {name:?} must be non-empty and use only letters, digits, '-', '_' or '.'");
    }
    Ok(())
}

fn preprocessed(mut f: DatasetFormat, p: &Option<Preprocess>) -> anyhow::Result<DatasetFormat> {
    if let Some(Preprocess {
        decimate: Some(factor), ..
    }) = p
    {
        if *factor < 1 {
            bail!("decimation factor must be >= 1");
        }
        f.trial_samples = f.trial_samples.div_ceil(*factor);
        f.sample_rate /= *factor as f64;
    }
    Ok(f)
}

impl Loaded {
    pub fn read(path: &Path, seed_override: Option<u64>) -> anyhow::Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = String::from_utf8(bytes.clone()).context("config is not UTF-8")?;
        let mut raw: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if let Some(s) = seed_override {
            raw.seed = s;
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let hash = Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect();
        let clients = resolve(&raw, &dir)?;
        Ok(Self { raw, dir, hash, clients })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rounds: self.raw.rounds,
            local_epochs: self.raw.local_epochs,
            seed: self.raw.seed,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.clients.iter().map(|c| c.name.clone()).collect()
    }

    pub fn client_id(&self, name: &str) -> anyhow::Result<usize> {
        self.clients
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| anyhow!("no client named {name:?}; configured: {}", self.names().join(", ")))
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.raw.out) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => self.dir.join(p),
            (None, None) => self.dir.join("out"),
        }
    }

    /// Environment override first, then the config value.
    pub fn round_timeout(&self) -> anyhow::Result<Duration> {
        let ms = match std::env::var(TIMEOUT_ENV) {
            Ok(v) => v
                .trim()
                .parse::<u64>()
                .with_context(|| format!("{TIMEOUT_ENV}={v:?} is not a whole number of milliseconds"))?,
            Err(_) => self.raw.network.round_timeout_ms,
        };
        if ms == 0 {
            bail!("round timeout must be at least 1 ms");
        }
        Ok(Duration::from_millis(ms))
    }

    pub fn join_timeout(&self) -> Duration {
        Duration::from_millis(self.raw.network.join_timeout_ms.max(1))
    }
}

fn resolve(raw: &RunConfig, dir: &Path) -> anyhow::Result<Vec<Client>> {
    if raw.clients.is_empty() {
        bail!("config declares no [[client]] blocks");
    }
    TrainConfig {
        rounds: raw.rounds,
        local_epochs: raw.local_epochs,
        seed: raw.seed,
    }
    .validate()?;
    let mut seen = HashSet::new();
    raw.clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            check_name(&c.name)?;
            if !seen.insert(c.name.clone()) {
                bail!("client name {:?} is used twice", c.name);
            }
            resolve_client(raw, dir, k, c).with_context(|| format!("client {}", c.name))
        })
        .collect()
}

fn resolve_client(raw: &RunConfig, dir: &Path, k: usize, c: &ClientConfig) -> anyhow::Result<Client> {
    let sources = [c.synth.is_some(), c.trials.is_some(), c.table.is_some()];
    if sources.iter().filter(|&&s| s).count() != 1 {
        bail!("exactly one of `synth`, `trials` or `table` must be given");
    }
    let (format, source, defaults) = if let Some(s) = &c.synth {
        let format = DatasetFormat::new(&c.name, s.channels, s.sample_rate, s.trial_samples, s.subjects, s.trials_per_subject)?;
        let spec = SynthSpec {
            format: format.clone(),
            informative: s.informative.clone(),
            rhythm_hz: s.rhythm_hz,
            depth: s.depth,
            noise: s.noise,
            variability: s.variability,
            seed: s.seed.unwrap_or_else(|| derive_seed(Stream::Synth, &[raw.seed, k as u64])),
        };
        spec.validate()?;
        (format, Source::Synth(spec), None)
    } else if let Some(t) = &c.trials {
        let path = dir.join(t);
        if !path.is_file() {
            bail!("trial file {} does not exist", path.display());
        }
        let mut format = load_trials(&path)?.format().clone();
        format.name = c.name.clone();
        (format, Source::File(path), None)
    } else {
        let row = table_row(c.table.as_deref().unwrap())?;
        let mut format = row.format();
        format.name = c.name.clone();
        (format, Source::ShapeOnly, Some((row.learning_rate, row.batch_size)))
    };
    let learning_rate = c
        .learning_rate
        .or(defaults.map(|d| d.0))
        .ok_or_else(|| anyhow!("learning_rate is required"))?;
    let batch_size = c
        .batch_size
        .or(defaults.map(|d| d.1))
        .ok_or_else(|| anyhow!("batch_size is required"))?;
    if !(learning_rate.is_finite() && learning_rate > 0.0) || batch_size < 1 {
        bail!("learning_rate must be > 0 and batch_size >= 1 (got {learning_rate}, {batch_size})");
    }
    if let Some(Preprocess {
        bandpass: Some([lo, hi]), ..
    }) = &c.preprocess
    {
        fleeg_core::data::Sos::butter_bandpass(*lo, *hi, format.sample_rate)?;
    }
    let format = preprocessed(format, &c.preprocess)?;
    let arch = match (&c.table, &c.preprocess) {
        (Some(t), None) => table_row(t)?.local_arch(),
        _ => derive_arch(&format)?,
    };
    Ok(Client {
        arch,
        name: c.name.clone(),
        format,
        source,
        hyper: ClientHyper {
            learning_rate,
            batch_size,
        },
        preprocess: c.preprocess.clone(),
    })
}
