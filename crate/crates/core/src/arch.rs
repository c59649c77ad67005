//! Local and global module architectures.
//!
//! Every local module ends in 100 feature maps of height 1 and width in
//! {30, 31, 32}; the global module maps any such feature to a `(2, 1, 1)` output:
//! after its (1,10) conv the width is 21..=23, which the (1,3) pool floors to 7,
//! exactly the width of the (1,7) head.

use crate::error::{Error, Result};
use crate::format::DatasetFormat;
use crate::network::LayerSpec;

pub const TEMPORAL_KERNELS: usize = 25;
pub const SPATIAL_KERNELS: usize = 25;
pub const BLOCK3_KERNELS: usize = 50;
pub const FEATURE_MAPS: usize = 100;
pub const GLOBAL_KERNELS: usize = 200;
pub const CLASSES: usize = 2;

/// Accepted widths of the unified local feature.
pub const FEATURE_WIDTHS: std::ops::RangeInclusive<usize> = 30..=32;
const TARGET_WIDTH: usize = 31;

pub const KERNEL_SEARCH: std::ops::RangeInclusive<usize> = 4..=24;
pub const POOL_SEARCH: std::ops::RangeInclusive<usize> = 1..=6;
pub const MIN_TRIAL_SAMPLES: usize = 120;

/// Temporal conv, spatial conv + pool, then two conv + pool blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalArch {
    pub channels: usize,
    /// Temporal kernel widths of the temporal filter, block 3 and block 4.
    pub kernels: [usize; 3],
    /// Pool widths after the spatial filter, block 3 and block 4.
    pub pools: [usize; 3],
}

impl LocalArch {
    /// Same temporal kernel width in all three temporal convolutions.
    pub fn uniform(channels: usize, kernel: usize, pools: [usize; 3]) -> Self {
        Self {
            channels,
            kernels: [kernel; 3],
            pools,
        }
    }

    /// Feature width for trials of `samples` time steps, or `None` if some layer
    /// does not fit.
    pub fn feature_width(&self, samples: usize) -> Option<usize> {
        let mut w = samples;
        for (&k, &p) in self.kernels.iter().zip(&self.pools) {
            if k == 0 || p == 0 || w < k {
                return None;
            }
            w = (w - k + 1) / p;
            if w == 0 {
                return None;
            }
        }
        Some(w)
    }

    pub fn layers(&self) -> Vec<LayerSpec> {
        let [k1, k2, k3] = self.kernels;
        let [p1, p2, p3] = self.pools;
        vec![
            LayerSpec::conv("local.temporal", TEMPORAL_KERNELS, 1, k1),
            LayerSpec::conv("local.spatial", SPATIAL_KERNELS, self.channels, 1),
            LayerSpec::pool(p1),
            LayerSpec::Elu,
            LayerSpec::conv("local.block3", BLOCK3_KERNELS, 1, k2),
            LayerSpec::pool(p2),
            LayerSpec::Elu,
            LayerSpec::conv("local.block4", FEATURE_MAPS, 1, k3),
            LayerSpec::pool(p3),
            LayerSpec::Elu,
        ]
    }
}

/// Conv(200, (1,10)) + pool (1,3), then the two-kernel (1,7) softmax head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlobalArch {
    pub kernel: usize,
    pub pool: usize,
    pub head: usize,
}

impl Default for GlobalArch {
    fn default() -> Self {
        Self {
            kernel: 10,
            pool: 3,
            head: 7,
        }
    }
}

impl GlobalArch {
    pub fn layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::conv("global.block", GLOBAL_KERNELS, 1, self.kernel),
            LayerSpec::pool(self.pool),
            LayerSpec::Elu,
            LayerSpec::conv("global.head", CLASSES, 1, self.head),
        ]
    }

    /// Input shape `(maps, height, width)` for a local feature of width `w`.
    pub fn input_shape(&self, width: usize) -> [usize; 3] {
        [FEATURE_MAPS, 1, width]
    }
}

/// One row of the published per-dataset configuration tables.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub name: &'static str,
    pub channels: usize,
    pub samples: usize,
    /// Sampling rate of the trials as fed to the network (after any downsampling).
    pub sample_rate: f64,
    pub subjects: usize,
    pub trials_per_subject: usize,
    pub kernels: [usize; 3],
    pub pools: [usize; 3],
    /// The table's stated "Output size" width.
    pub stated_width: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl TableRow {
    pub fn local_arch(&self) -> LocalArch {
        LocalArch {
            channels: self.channels,
            kernels: self.kernels,
            pools: self.pools,
        }
    }

    pub fn format(&self) -> DatasetFormat {
        DatasetFormat {
            name: self.name.to_string(),
            channels: self.channels,
            sample_rate: self.sample_rate,
            trial_samples: self.samples,
            subjects: self.subjects,
            trials_per_subject: self.trials_per_subject,
        }
    }
}

macro_rules! row {
    ($name:expr, $c:expr, $t:expr, $fs:expr, $s:expr, $n:expr, $k:expr, $p:expr, $w:expr, $lr:expr, $b:expr) => {
        TableRow {
            name: $name,
            channels: $c,
            samples: $t,
            sample_rate: $fs,
            subjects: $s,
            trials_per_subject: $n,
            kernels: $k,
            pools: $p,
            stated_width: $w,
            learning_rate: $lr,
            batch_size: $b,
        }
    };
}

/// The nine published configurations, verbatim.
pub const TABLE: [TableRow; 9] = [
    row!("KU", 62, 1000, 250.0, 54, 400, [10, 10, 10], [3, 3, 3], 32, 0.01, 512),
    row!("SHU", 32, 1000, 250.0, 25, 500, [10, 10, 10], [3, 3, 3], 32, 0.005, 512),
    row!("Shin2017", 30, 2000, 200.0, 29, 60, [8, 8, 8], [5, 4, 3], 30, 0.005, 512),
    row!("BCI-IV-2a", 22, 1000, 250.0, 9, 288, [10, 10, 10], [3, 3, 3], 32, 0.01, 512),
    row!("Weibo2014", 60, 800, 200.0, 10, 158, [8, 8, 8], [2, 3, 3], 30, 0.005, 512),
    row!("MunichMI", 128, 3500, 250.0, 10, 300, [10, 10, 10], [4, 4, 3], 32, 0.01, 128),
    row!("HGD", 128, 2000, 500.0, 14, 482, [20, 20, 10], [6, 3, 3], 31, 0.01, 128),
    row!("Cho2017", 64, 1536, 512.0, 52, 190, [22, 22, 22], [4, 3, 3], 32, 0.01, 512),
    row!("Murat2018", 22, 200, 200.0, 11, 1593, [6, 6, 6], [1, 2, 3], 30, 0.01, 512),
];

pub fn table_row(name: &str) -> Result<&'static TableRow> {
    let canonical = match name {
        "Shin2017A" => "Shin2017",
        "BCI-IV2a" | "BCIIV2a" => "BCI-IV-2a",
        other => other,
    };
    TABLE
        .iter()
        .find(|r| r.name.eq_ignore_ascii_case(canonical))
        .ok_or_else(|| Error::UnknownDataset {
            name: name.to_string(),
            valid: TABLE.iter().map(|r| r.name).collect(),
        })
}

pub fn build_from_table(name: &str) -> Result<(LocalArch, GlobalArch)> {
    Ok((table_row(name)?.local_arch(), GlobalArch::default()))
}

/// Searches temporal kernels in [4, 24] and pools in [1, 6] for a local module
/// whose feature width lands in {30, 31, 32}.
///
/// Candidates are ranked by distance of the width from 31, then total pool
/// size, then the pool triple lexicographically, then kernel width.
pub fn derive_arch(format: &DatasetFormat) -> Result<LocalArch> {
    let t = format.trial_samples;
    let searched = || {
        format!(
            "{} ({} samples); searched temporal kernel in [{}, {}], pools in [{}, {}]",
            format.name,
            t,
            KERNEL_SEARCH.start(),
            KERNEL_SEARCH.end(),
            POOL_SEARCH.start(),
            POOL_SEARCH.end()
        )
    };
    if format.channels == 0 {
        return Err(Error::Infeasible(format!("{}: zero channels", format.name)));
    }
    if t < MIN_TRIAL_SAMPLES {
        return Err(Error::Infeasible(format!(
            "{}, below the minimum of {MIN_TRIAL_SAMPLES} samples",
            searched()
        )));
    }
    let mut best: Option<((usize, usize, [usize; 3], usize), LocalArch)> = None;
    for k in KERNEL_SEARCH {
        for p1 in POOL_SEARCH {
            for p2 in POOL_SEARCH {
                for p3 in POOL_SEARCH {
                    let arch = LocalArch::uniform(format.channels, k, [p1, p2, p3]);
                    let Some(w) = arch.feature_width(t) else { continue };
                    if !FEATURE_WIDTHS.contains(&w) {
                        continue;
                    }
                    let key = (w.abs_diff(TARGET_WIDTH), p1 + p2 + p3, [p1, p2, p3], k);
                    if best.as_ref().map_or(true, |(b, _)| key < *b) {
                        best = Some((key, arch));
                    }
                }
            }
        }
    }
    best.map(|(_, a)| a).ok_or_else(|| Error::Infeasible(searched()))
}
