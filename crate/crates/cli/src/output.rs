//! Files written by a run.
//!
//! `<out>/<mode>/` holds `rounds.jsonl` (one record per fold, round and
//! client), `folds.csv`, `accuracy.csv`, `manifest.json` and
//! `weights/<client>_fold<f>.fwt`. `<out>/subjects.csv` pairs the two modes
//! once both exist.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use fleeg_core::evaluation::{subject_results, summarize, FoldReport};
use fleeg_core::federation::{BestModel, ClientFoldResult, RoundReport};
use fleeg_core::harness::Mode;
use fleeg_core::{PersonalizedModel, WeightSet};
use fleeg_transport::{decode_weights, encode_weights};
use serde::Serialize;

use crate::config::Loaded;

pub const ROUNDS: &str = "rounds.jsonl";
pub const FOLDS: &str = "folds.csv";
pub const ACCURACY: &str = "accuracy.csv";
pub const MANIFEST: &str = "manifest.json";
pub const SUBJECTS: &str = "subjects.csv";
const FOLDS_HEADER: &str = "fold,client,held_out,test_acc,best_round,best_val_loss";

pub fn mode_dir(out: &Path, mode: Mode) -> PathBuf {
    out.join(mode.as_str())
}

pub fn model_file(client: &str, fold: usize) -> String {
    format!("{client}_fold{fold}.fwt")
}

pub fn weights_path(dir: &Path, client: &str, fold: usize) -> PathBuf {
    dir.join("weights").join(model_file(client, fold))
}

#[derive(Serialize)]
struct RoundRecord<'a> {
    fold: usize,
    round: usize,
    client: &'a str,
    n_train: usize,
    train_loss: f64,
    val_loss: f64,
    val_acc: f64,
    overall_loss: f64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_sha256: &'a str,
    seed: u64,
    rounds: usize,
    local_epochs: usize,
    clients: Vec<String>,
    fleeg_version: &'static str,
    protocol_version: usize,
}

/// Streams the logs of one mode; every record is flushed as written.
pub struct RunWriter {
    dir: PathBuf,
    names: Vec<String>,
    rounds: BufWriter<File>,
    folds: BufWriter<File>,
    reports: Vec<FoldReport>,
}

impl RunWriter {
    /// Refuses to overwrite an earlier run unless `force`.
    pub fn create(cfg: &Loaded, dir: PathBuf, force: bool) -> anyhow::Result<Self> {
        if dir.join(ROUNDS).exists() && !force {
            bail!("{} already holds a run; pass --force to overwrite", dir.display());
        }
        std::fs::create_dir_all(dir.join("weights")).with_context(|| format!("creating {}", dir.display()))?;
        let manifest = Manifest {
            config_sha256: &cfg.hash,
            seed: cfg.raw.seed,
            rounds: cfg.raw.rounds,
            local_epochs: cfg.raw.local_epochs,
            clients: cfg.names(),
            fleeg_version: env!("CARGO_PKG_VERSION"),
            protocol_version: fleeg_transport::frame::PROTOCOL_VERSION,
        };
        std::fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
        let open = |name: &str| -> anyhow::Result<BufWriter<File>> {
            let p = dir.join(name);
            Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
        };
        let rounds = open(ROUNDS)?;
        let mut folds = open(FOLDS)?;
        writeln!(folds, "{FOLDS_HEADER}")?;
        folds.flush()?;
        Ok(Self {
            names: cfg.names(),
            dir,
            rounds,
            folds,
            reports: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn round(&mut self, fold: usize, report: &RoundReport) -> anyhow::Result<()> {
        for &(k, n, l) in &report.clients {
            let rec = RoundRecord {
                fold,
                round: report.round,
                client: &self.names[k],
                n_train: n,
                train_loss: l.train_loss,
                val_loss: l.val_loss,
                val_acc: l.val_acc,
                overall_loss: report.overall_loss,
            };
            serde_json::to_writer(&mut self.rounds, &rec)?;
            self.rounds.write_all(b"\n")?;
        }
        self.rounds.flush()?;
        Ok(())
    }

    pub fn fold(&mut self, report: &FoldReport) -> anyhow::Result<()> {
        for c in &report.clients {
            writeln!(
                self.folds,
                "{},{},{},{},{},{}",
                report.fold, self.names[c.client], c.held_out, c.test_acc, c.best_round, c.best_val_loss
            )?;
        }
        self.folds.flush()?;
        self.reports.push(report.clone());
        Ok(())
    }

    /// Writes `accuracy.csv` and returns the collected fold reports.
    pub fn finish(mut self) -> anyhow::Result<Vec<FoldReport>> {
        self.rounds.flush()?;
        self.folds.flush()?;
        let mut s = String::from("client,subject,accuracy,repetitions\n");
        let results = subject_results(&self.reports);
        for r in &results {
            s += &format!("{},{},{},{}\n", self.names[r.client], r.subject, r.accuracy, r.repetitions);
        }
        for (k, name) in self.names.iter().enumerate() {
            let v: Vec<f64> = results.iter().filter(|r| r.client == k).map(|r| r.accuracy).collect();
            if !v.is_empty() {
                s += &format!("{name},mean,{},{}\n", v.iter().sum::<f64>() / v.len() as f64, v.len());
            }
        }
        std::fs::write(self.dir.join(ACCURACY), s)?;
        Ok(self.reports)
    }
}

/// A client's best model as one weight set: local entries, then global ones.
pub fn write_model(dir: &Path, client: &str, fold: usize, best: &BestModel) -> anyhow::Result<()> {
    let mut all = WeightSet::default();
    for e in best.local.entries().iter().chain(best.global.entries()) {
        all.push(e.name.clone(), e.value.clone());
    }
    let path = weights_path(dir, client, fold);
    std::fs::create_dir_all(path.parent().unwrap())?;
    std::fs::write(&path, encode_weights(&all)?).with_context(|| format!("writing {}", path.display()))
}

/// Loads a model file written by [`write_model`] into `model`.
pub fn read_model(path: &Path, model: &mut PersonalizedModel) -> anyhow::Result<()> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let all = decode_weights(&bytes).with_context(|| format!("decoding {}", path.display()))?;
    let n_local = model.local_weights().len();
    if all.len() < n_local {
        model.local_weights().check_compatible(&all)?;
    }
    let (local, global) = all.entries().split_at(n_local.min(all.len()));
    model.replace_local(WeightSet::new(local.to_vec()))?;
    model.replace_global(WeightSet::new(global.to_vec()))?;
    Ok(())
}

pub fn read_folds(path: &Path, names: &[String]) -> anyhow::Result<Vec<FoldReport>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    if lines.next() != Some(FOLDS_HEADER) {
        bail!("{} does not start with the expected header", path.display());
    }
    let mut reports: Vec<FoldReport> = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || anyhow::anyhow!("{} line {}: malformed row {line:?}", path.display(), i + 2);
        if f.len() != 6 {
            return Err(bad());
        }
        let client = names.iter().position(|n| n == f[1]).ok_or_else(bad)?;
        let fold: usize = f[0].parse().map_err(|_| bad())?;
        let result = ClientFoldResult {
            client,
            held_out: f[2].parse().map_err(|_| bad())?,
            test_acc: f[3].parse().map_err(|_| bad())?,
            best_round: f[4].parse().map_err(|_| bad())?,
            best_val_loss: f[5].parse().map_err(|_| bad())?,
        };
        match reports.last_mut() {
            Some(r) if r.fold == fold => r.clients.push(result),
            _ => reports.push(FoldReport {
                fold,
                clients: vec![result],
            }),
        }
    }
    Ok(reports)
}

/// Writes `<out>/subjects.csv` when both modes have finished; returns
/// whether it did.
pub fn write_subjects_if_paired(cfg: &Loaded, out: &Path) -> anyhow::Result<bool> {
    let (fl, base) = (mode_dir(out, Mode::Federated), mode_dir(out, Mode::Baseline));
    if !(fl.join(ACCURACY).exists() && base.join(ACCURACY).exists()) {
        return Ok(false);
    }
    let names = cfg.names();
    let a = read_folds(&fl.join(FOLDS), &names)?;
    let b = read_folds(&base.join(FOLDS), &names)?;
    let summary = summarize(&a, &b)?;
    std::fs::write(out.join(SUBJECTS), summary.to_csv(&names))?;
    Ok(true)
}
