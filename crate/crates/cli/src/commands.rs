//! The subcommands.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use fleeg_core::data::{generate, plan_client_folds, save_trials, TrialStore};
use fleeg_core::evaluation::{subject_saliency, FoldReport, SaliencyMap};
use fleeg_core::federation::ClientState;
use fleeg_core::harness::{plan_for, run_folds, ClientSetup, Event, Mode};
use fleeg_transport::{run_client, serve, ServerConfig, ServerEvent};

use crate::config::{Loaded, Source};
use crate::output::{mode_dir, model_file, read_model, write_model, write_subjects_if_paired, RunWriter};
use crate::ConfigError;

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub force: bool,
    pub seed: Option<u64>,
}

impl Common {
    pub fn load(&self) -> anyhow::Result<Loaded> {
        Loaded::read(&self.config, self.seed).context(ConfigError)
    }
}

fn prepare_all(cfg: &Loaded) -> anyhow::Result<Vec<TrialStore>> {
    cfg.clients.iter().map(|c| c.prepare()).collect::<anyhow::Result<_>>().context(ConfigError)
}

fn setups(cfg: &Loaded) -> anyhow::Result<Vec<ClientSetup>> {
    let stores = prepare_all(cfg)?;
    cfg.clients
        .iter()
        .zip(stores)
        .enumerate()
        .map(|(k, (c, store))| {
            Ok(ClientSetup {
                name: c.name.clone(),
                store: Arc::new(store),
                model: c.model(cfg.raw.seed, k)?,
                hyper: c.hyper,
            })
        })
        .collect::<anyhow::Result<_>>()
        .context(ConfigError)
}

fn folds_of(cfg: &Loaded) -> usize {
    cfg.clients.iter().map(|c| c.format.subjects).max().unwrap_or(0)
}

/// Writes every synthetic client's raw trials to `<out>/<name>.ftr`.
pub fn gen(common: &Common) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = common.load()?;
    let out = cfg.out_dir(common.out.as_deref());
    let targets: Vec<_> = cfg
        .clients
        .iter()
        .filter_map(|c| match &c.source {
            Source::Synth(spec) => Some((c, spec, out.join(format!("{}.ftr", c.name)))),
            _ => None,
        })
        .collect();
    if targets.is_empty() {
        return Err(anyhow!("config has no synth clients to generate")).context(ConfigError);
    }
    if !common.force {
        if let Some((_, _, p)) = targets.iter().find(|t| t.2.exists()) {
            return Err(anyhow!("{} exists; pass --force to overwrite", p.display())).context(ConfigError);
        }
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (c, spec, path) in targets {
        let store = generate(spec).with_context(|| format!("client {}", c.name))?;
        save_trials(&store, &path)?;
        let f = store.format();
        println!(
            "{}: {} trials ({} subjects x {}), {} channels, {} samples at {} Hz -> {}",
            c.name,
            store.len(),
            f.subjects,
            f.trials_per_subject,
            f.channels,
            f.trial_samples,
            f.sample_rate,
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

fn print_accuracy(names: &[String], reports: &[FoldReport], mode: Mode) {
    for (k, name) in names.iter().enumerate() {
        let accs: Vec<f64> = fleeg_core::evaluation::subject_results(reports)
            .into_iter()
            .filter(|r| r.client == k)
            .map(|r| r.accuracy)
            .collect();
        let mean = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        println!("{}: {name} mean subject accuracy {mean:.4}", mode.as_str());
    }
}

/// Trains every fold in-process and writes `<out>/<mode>/`.
pub fn train(common: &Common, mode: Mode) -> anyhow::Result<Vec<FoldReport>> {
    let cfg = common.load()?;
    let setups = setups(&cfg)?;
    let plans = plan_for(&setups, cfg.raw.seed).context(ConfigError)?;
    let out = cfg.out_dir(common.out.as_deref());
    let mut writer = RunWriter::create(&cfg, mode_dir(&out, mode), common.force).context(ConfigError)?;
    let names = cfg.names();
    let mut failure: Option<anyhow::Error> = None;
    let mut observer = |ev: Event<'_>| {
        let r = match ev {
            Event::Round { fold, report, .. } => writer.round(fold, report),
            Event::Fold(outcome) => writer.fold(&outcome.report).and_then(|_| {
                eprintln!("fold {} done", outcome.fold);
                outcome
                    .best
                    .iter()
                    .enumerate()
                    .try_for_each(|(k, b)| write_model(writer.dir(), &names[k], outcome.fold, b))
            }),
        };
        r.map_err(|e| {
            let text = e.to_string();
            failure = Some(e);
            fleeg_core::Error::Contract(format!("writing outputs: {text}"))
        })
    };
    let result = run_folds(&setups, &plans, &cfg.train_config(), mode, &mut observer);
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    let reports = writer.finish()?;
    print_accuracy(&names, &reports, mode);
    if write_subjects_if_paired(&cfg, &out)? {
        println!("wrote {}", out.join(crate::output::SUBJECTS).display());
    }
    Ok(reports)
}

/// Per-channel saliency of every held-out subject, from the best models in
/// `weights` (default `<out>/federated/weights`). Subjects held out in
/// several folds are averaged over those folds.
pub fn saliency(common: &Common, weights: Option<&Path>) -> anyhow::Result<Vec<PathBuf>> {
    let cfg = common.load()?;
    let setups = setups(&cfg)?;
    let plans = plan_for(&setups, cfg.raw.seed).context(ConfigError)?;
    let out = cfg.out_dir(common.out.as_deref());
    let weights = weights.map(Path::to_path_buf).unwrap_or_else(|| mode_dir(&out, Mode::Federated).join("weights"));
    let mut sums: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for plan in &plans {
        for (k, (setup, part)) in setups.iter().zip(&plan.clients).enumerate() {
            let mut model = setup.model.clone();
            let path = weights.join(model_file(&setup.name, plan.fold));
            read_model(&path, &mut model).with_context(|| format!("loading {}", path.display()))?;
            let map = subject_saliency(&model, &setup.store, &part.test, k, part.held_out)?;
            let entry = sums
                .entry((k, part.held_out))
                .or_insert_with(|| (vec![0.0; map.scores.len()], 0));
            for (a, v) in entry.0.iter_mut().zip(&map.scores) {
                *a += v;
            }
            entry.1 += 1;
        }
    }
    let target = out.join("saliency");
    std::fs::create_dir_all(&target)?;
    let mut written = Vec::new();
    for ((k, subject), (sum, n)) in sums {
        let map = SaliencyMap {
            client: k,
            subject,
            scores: sum.into_iter().map(|v| v / n as f64).collect(),
        };
        let path = target.join(format!("saliency_{}_{subject}.csv", setups[k].name));
        std::fs::write(&path, map.to_csv())?;
        written.push(path);
    }
    println!("wrote {} saliency files to {}", written.len(), target.display());
    Ok(written)
}

/// Coordinates a distributed federated run; writes the same files as
/// `train --federated` apart from the weights, which each client writes.
pub fn serve_cmd(common: &Common, address: Option<&str>) -> anyhow::Result<Vec<FoldReport>> {
    let cfg = common.load()?;
    let round_timeout = cfg.round_timeout().context(ConfigError)?;
    let first = cfg.clients[0].model(cfg.raw.seed, 0).context(ConfigError)?;
    let server_cfg = ServerConfig {
        clients: cfg.clients.iter().map(|c| (c.name.clone(), c.format.clone())).collect(),
        train: cfg.train_config(),
        folds: folds_of(&cfg),
        initial_global: first.global_weights().clone(),
        round_timeout,
        join_timeout: cfg.join_timeout(),
    };
    let addr = address.unwrap_or(&cfg.raw.network.address);
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    eprintln!("listening on {}", listener.local_addr()?);
    let out = cfg.out_dir(common.out.as_deref());
    let mut writer = RunWriter::create(&cfg, mode_dir(&out, Mode::Federated), common.force).context(ConfigError)?;
    let mut failure: Option<anyhow::Error> = None;
    let mut observer = |ev: ServerEvent<'_>| {
        let r = match ev {
            ServerEvent::Rejected(why) => {
                eprintln!("rejected connection: {why}");
                Ok(())
            }
            ServerEvent::Round { fold, report, .. } => writer.round(fold, report),
            ServerEvent::Fold(report) => {
                eprintln!("fold {} done", report.fold);
                writer.fold(report)
            }
        };
        r.map_err(|e| {
            let text = e.to_string();
            failure = Some(e);
            fleeg_core::Error::Contract(format!("writing outputs: {text}"))
        })
    };
    let result = serve(&listener, &server_cfg, &mut observer);
    if let Some(e) = failure {
        return Err(e);
    }
    result?;
    let reports = writer.finish()?;
    print_accuracy(&cfg.names(), &reports, Mode::Federated);
    write_subjects_if_paired(&cfg, &out)?;
    Ok(reports)
}

/// Joins a distributed run as the configured client `name`.
pub fn client_cmd(common: &Common, name: &str, address: Option<&str>) -> anyhow::Result<()> {
    let cfg = common.load()?;
    let k = cfg.client_id(name).context(ConfigError)?;
    let c = &cfg.clients[k];
    let store = Arc::new(c.prepare().context(ConfigError)?);
    let seed = cfg.raw.seed;
    let plans = plan_client_folds(&store, k, folds_of(&cfg), seed).context(ConfigError)?;
    let mut state = ClientState::new(k, c.model(seed, k)?, store, c.hyper, seed).context(ConfigError)?;
    let dir = mode_dir(&cfg.out_dir(common.out.as_deref()), Mode::Federated);
    std::fs::create_dir_all(dir.join("weights"))?;
    let mut on_fold = |fold: usize, _: &fleeg_core::federation::ClientFoldResult, best: &fleeg_core::federation::BestModel| {
        write_model(&dir, name, fold, best).map_err(|e| fleeg_core::Error::Contract(format!("writing weights: {e}")))
    };
    let addr = address.unwrap_or(&cfg.raw.network.address);
    let results = run_client(addr, &mut state, &plans, cfg.raw.local_epochs, &mut on_fold)
        .with_context(|| format!("client {name} via {addr}"))?;
    let mean = results.iter().map(|r| r.test_acc).sum::<f64>() / results.len().max(1) as f64;
    println!("{name}: {} folds, mean fold accuracy {mean:.4}", results.len());
    Ok(())
}

/// Prints each client's local module output size. Fails after printing if
/// any client's features do not fit the global module.
pub fn arch(common: &Common) -> anyhow::Result<()> {
    let cfg = common.load()?;
    let mut unfit = Vec::new();
    for (k, c) in cfg.clients.iter().enumerate() {
        let (ch, t) = (c.format.channels, c.format.trial_samples);
        let width = c.arch.feature_width(t).map_or("none".to_string(), |w| w.to_string());
        match c.model(cfg.raw.seed, k) {
            Ok(model) => {
                let [_, m, h, w] = model.local().output_dims(1);
                println!("{}: (1,{ch},{t}) -> ({m},{h},{w}) -> (2,1,1), {} parameters", c.name, model.num_params());
            }
            Err(e) => {
                println!("{}: (1,{ch},{t}) -> feature width {width}: {e:#}", c.name);
                unfit.push(c.name.clone());
            }
        }
    }
    if !unfit.is_empty() {
        return Err(anyhow!("no valid model for {}", unfit.join(", "))).context(ConfigError);
    }
    Ok(())
}
