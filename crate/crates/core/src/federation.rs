//! Server-coordinated rounds of local training with sample-weighted averaging
//! of the global module.
//!
//! One round: every client installs the current global weights, trains both
//! of its modules for `E` epochs of mini-batch SGD, and returns its updated
//! global weights; the server replaces the global weights with the average of
//! those updates weighted by `N_k / N`. A baseline run is the same loop with
//! the averaging skipped, so each client keeps its own global module.

use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{ClientFold, TrialStore};
use crate::error::{contract, Error, Result};
use crate::evaluation::evaluate;
use crate::model::PersonalizedModel;
use crate::rng::{keyed_rng, Stream};
use crate::weights::WeightSet;

/// Trials per forward pass when only evaluating.
pub const EVAL_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 || self.local_epochs < 1 {
            return Err(contract(format!(
                "rounds ({}) and local epochs ({}) must both be >= 1",
                self.rounds, self.local_epochs
            )));
        }
        Ok(())
    }
}

/// Per-client optimizer settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientHyper {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl ClientHyper {
    /// `learning_rate == 0` is accepted here so a zero step can be exercised.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) || self.batch_size < 1 {
            return Err(contract(format!(
                "learning rate {} must be finite and >= 0, batch size {} >= 1",
                self.learning_rate, self.batch_size
            )));
        }
        Ok(())
    }
}

/// Losses one client reports for one round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientLosses {
    /// Sample-weighted mean of the batch losses of the last local epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client: usize,
    pub theta_global: WeightSet,
    pub losses: ClientLosses,
}

/// The client's model right after the local training of its best round.
#[derive(Clone, Debug, PartialEq)]
pub struct BestModel {
    pub round: usize,
    pub val_loss: f64,
    pub local: WeightSet,
    pub global: WeightSet,
}

/// One client's result for one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientFoldResult {
    pub client: usize,
    pub held_out: usize,
    pub test_acc: f64,
    pub best_round: usize,
    pub best_val_loss: f64,
}

pub struct ClientState {
    id: usize,
    model: PersonalizedModel,
    initial: PersonalizedModel,
    store: Arc<TrialStore>,
    fold: Option<(usize, ClientFold)>,
    hyper: ClientHyper,
    seed: u64,
    best: Option<BestModel>,
    epoch_losses: Vec<f64>,
}

impl ClientState {
    pub fn new(id: usize, model: PersonalizedModel, store: Arc<TrialStore>, hyper: ClientHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let f = store.format();
        if [f.channels, f.trial_samples] != [model.channels(), model.trial_samples()] {
            return Err(contract(format!(
                "client {id}: model expects {} x {} trials, store {} holds {} x {}",
                model.channels(),
                model.trial_samples(),
                f.name,
                f.channels,
                f.trial_samples
            )));
        }
        Ok(Self {
            id,
            initial: model.clone(),
            model,
            store,
            fold: None,
            hyper,
            seed,
            best: None,
            epoch_losses: Vec::new(),
        })
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn model(&self) -> &PersonalizedModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut PersonalizedModel {
        &mut self.model
    }

    pub fn store(&self) -> &TrialStore {
        &self.store
    }

    pub fn hyper(&self) -> ClientHyper {
        self.hyper
    }

    pub fn best(&self) -> Option<&BestModel> {
        self.best.as_ref()
    }

    /// Training loss of each local epoch of the latest update.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn fold(&self) -> Option<&ClientFold> {
        self.fold.as_ref().map(|(_, f)| f)
    }

    /// `N_k`: size of the current fold's training partition.
    pub fn n_train(&self) -> usize {
        self.fold().map_or(0, |f| f.train.len())
    }

    /// Resets the model to its initial weights and installs the partition of `fold`.
    pub fn begin_fold(&mut self, fold: usize, plan: ClientFold) -> Result<()> {
        if plan.train.is_empty() || plan.validation.is_empty() || plan.test.is_empty() {
            return Err(contract(format!(
                "client {}, fold {fold}: train, validation and test partitions must be non-empty",
                self.id
            )));
        }
        if let Some(&bad) = plan.train.iter().chain(&plan.validation).chain(&plan.test).find(|&&i| i >= self.store.len()) {
            return Err(contract(format!("client {}: trial index {bad} out of range", self.id)));
        }
        self.model = self.initial.clone();
        self.fold = Some((fold, plan));
        self.best = None;
        Ok(())
    }

    /// Installs `theta_global`, trains `epochs` epochs on the training
    /// partition, then scores the validation partition.
    ///
    /// Batch order is a permutation keyed by `(seed, client, fold, round,
    /// epoch)`; the final short batch is kept.
    pub fn client_update(&mut self, round: usize, epochs: usize, theta_global: &WeightSet) -> Result<ClientUpdate> {
        self.model.global_weights().check_compatible(theta_global)?;
        self.model.replace_global(theta_global.clone())?;
        self.train_round(round, epochs)
    }

    /// As [`ClientState::client_update`] without installing new global weights.
    pub fn local_update(&mut self, round: usize, epochs: usize) -> Result<ClientUpdate> {
        self.train_round(round, epochs)
    }

    fn train_round(&mut self, round: usize, epochs: usize) -> Result<ClientUpdate> {
        let (fold, plan) = self
            .fold
            .as_ref()
            .ok_or_else(|| contract(format!("client {} has no fold installed", self.id)))?;
        let fold = *fold;
        let mut order = plan.train.clone();
        let b = self.hyper.batch_size;
        let mut batch_index = 0;
        self.epoch_losses.clear();
        for epoch in 0..epochs {
            let key = [self.seed, self.id as u64, fold as u64, round as u64, epoch as u64];
            order.clone_from(&plan.train);
            order.shuffle(&mut keyed_rng(Stream::Batches, &key));
            let mut sum = 0.0;
            for chunk in order.chunks(b) {
                let (x, y) = self.store.batch(chunk);
                let diverged = |loss| Error::Divergence {
                    client: self.id,
                    round,
                    batch: batch_index,
                    loss,
                };
                let loss = match self.model.train_step(x, &y, self.hyper.learning_rate) {
                    Err(Error::NonFinite { .. }) => return Err(diverged(f64::NAN)),
                    other => other?,
                };
                let (local, global) = (self.model.local_weights(), self.model.global_weights());
                if !loss.is_finite() || local.values().chain(global.values()).any(|v| !v.is_finite()) {
                    return Err(diverged(loss));
                }
                sum += loss * chunk.len() as f64;
                batch_index += 1;
            }
            self.epoch_losses.push(sum / order.len() as f64);
        }
        let train_loss = *self.epoch_losses.last().ok_or_else(|| contract("local epochs must be >= 1"))?;
        let (val_loss, val_acc) = match evaluate(&self.model, &self.store, &plan.validation, EVAL_CHUNK) {
            Err(Error::NonFinite { .. }) => {
                return Err(Error::Divergence {
                    client: self.id,
                    round,
                    batch: batch_index,
                    loss: f64::NAN,
                })
            }
            other => other?,
        };
        if self.best.as_ref().map_or(true, |b| val_loss < b.val_loss) {
            let (local, global) = self.model.split_weights();
            self.best = Some(BestModel {
                round,
                val_loss,
                local,
                global,
            });
        }
        Ok(ClientUpdate {
            client: self.id,
            theta_global: self.model.global_weights().clone(),
            losses: ClientLosses {
                train_loss,
                val_loss,
                val_acc,
            },
        })
    }

    /// Scores the best snapshot on the held-out subject.
    pub fn finish_fold(&self) -> Result<(ClientFoldResult, BestModel)> {
        let (_, plan) = self
            .fold
            .as_ref()
            .ok_or_else(|| contract(format!("client {} has no fold installed", self.id)))?;
        let best = self
            .best
            .clone()
            .ok_or_else(|| contract(format!("client {} finished a fold without training", self.id)))?;
        let mut model = self.model.clone();
        model.replace_local(best.local.clone())?;
        model.replace_global(best.global.clone())?;
        let (_, test_acc) = evaluate(&model, &self.store, &plan.test, EVAL_CHUNK)?;
        let result = ClientFoldResult {
            client: self.id,
            held_out: plan.held_out,
            test_acc,
            best_round: best.round,
            best_val_loss: best.val_loss,
        };
        Ok((result, best))
    }
}

/// Global weights and the per-client sample counts they are averaged with.
#[derive(Clone, Debug)]
pub struct ServerState {
    theta_global: WeightSet,
    /// `(client id, N_k)`, ascending by id.
    registry: Vec<(usize, usize)>,
    round: usize,
}

impl ServerState {
    pub fn new(theta_global: WeightSet, mut registry: Vec<(usize, usize)>) -> Result<Self> {
        registry.sort_unstable();
        if registry.is_empty() {
            return Err(contract("server needs at least one registered client"));
        }
        if let Some(w) = registry.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(contract(format!("client {} registered twice", w[0].0)));
        }
        if let Some(&(k, _)) = registry.iter().find(|r| r.1 == 0) {
            return Err(contract(format!("client {k} registered with no training samples")));
        }
        Ok(Self {
            theta_global,
            registry,
            round: 0,
        })
    }

    pub fn theta_global(&self) -> &WeightSet {
        &self.theta_global
    }

    pub fn registry(&self) -> &[(usize, usize)] {
        &self.registry
    }

    pub fn round(&self) -> usize {
        self.round
    }

    /// `N = sum N_k`.
    pub fn total(&self) -> usize {
        self.registry.iter().map(|r| r.1).sum()
    }

    /// `N_k / N` per registered client, ascending by id.
    pub fn coefficients(&self) -> Vec<(usize, f64)> {
        let total = self.total() as f64;
        self.registry.iter().map(|&(k, n)| (k, n as f64 / total)).collect()
    }

    /// `theta_g = sum_k (N_k / N) theta_g_k`, summed in ascending client order
    /// whatever order `updates` arrive in.
    pub fn aggregate(&mut self, updates: &[(usize, &WeightSet)]) -> Result<&WeightSet> {
        let round = self.round + 1;
        let mut ordered = Vec::with_capacity(self.registry.len());
        for &(k, c) in &self.coefficients() {
            let mut found = updates.iter().filter(|u| u.0 == k);
            let Some(&(_, w)) = found.next() else {
                return Err(Error::IncompleteRound { round, client: k });
            };
            if found.next().is_some() {
                return Err(contract(format!("round {round}: client {k} sent two updates")));
            }
            self.theta_global.check_compatible(w)?;
            ordered.push((c, w));
        }
        if let Some(&(k, _)) = updates.iter().find(|u| !self.registry.iter().any(|r| r.0 == u.0)) {
            return Err(contract(format!("round {round}: update from unregistered client {k}")));
        }
        let mut next = self.theta_global.clone();
        for (e, entry) in next.entries_mut().iter_mut().enumerate() {
            let (c0, w0) = ordered[0];
            let out = entry.value.data_mut();
            for (o, &v) in out.iter_mut().zip(w0.get(e).data()) {
                *o = c0 * v;
            }
            for &(c, w) in &ordered[1..] {
                for (o, &v) in out.iter_mut().zip(w.get(e).data()) {
                    *o += c * v;
                }
            }
        }
        self.theta_global = next;
        self.round = round;
        Ok(&self.theta_global)
    }
}

/// Per-client losses of one round plus the sample-weighted objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// `(client id, N_k, losses)`, ascending by id.
    pub clients: Vec<(usize, usize, ClientLosses)>,
    /// `sum_k (N_k / N) L_k` over the training losses.
    pub overall_loss: f64,
}

impl RoundReport {
    pub fn new(round: usize, mut clients: Vec<(usize, usize, ClientLosses)>) -> Self {
        clients.sort_by_key(|c| c.0);
        let overall_loss = weighted_loss(clients.iter().map(|c| (c.1, c.2.train_loss)));
        Self {
            round,
            clients,
            overall_loss,
        }
    }
}

/// `sum (n_k / N) l_k`.
pub fn weighted_loss(terms: impl Iterator<Item = (usize, f64)> + Clone) -> f64 {
    let total: usize = terms.clone().map(|t| t.0).sum();
    terms.map(|(n, l)| n as f64 / total as f64 * l).sum()
}

/// How global weights reach the clients in a round.
pub enum Distribution<'a> {
    /// Every client installs the server's global weights.
    Shared(&'a WeightSet),
    /// Every client keeps its own global module (baseline).
    Own,
}

/// A set of clients that can run one round together.
pub trait Cohort {
    /// `(client id, N_k)`.
    fn registry(&self) -> Vec<(usize, usize)>;
    /// One update per client, in any order.
    fn run_round(&mut self, round: usize, input: Distribution<'_>) -> Result<Vec<ClientUpdate>>;
}

/// In-process clients trained one after another.
pub struct LocalCohort<'a> {
    pub clients: &'a mut [ClientState],
    pub epochs: usize,
}

impl Cohort for LocalCohort<'_> {
    fn registry(&self) -> Vec<(usize, usize)> {
        self.clients.iter().map(|c| (c.id(), c.n_train())).collect()
    }

    fn run_round(&mut self, round: usize, input: Distribution<'_>) -> Result<Vec<ClientUpdate>> {
        self.clients
            .iter_mut()
            .map(|c| match input {
                Distribution::Shared(theta) => c.client_update(round, self.epochs, theta),
                Distribution::Own => c.local_update(round, self.epochs),
            }
            .map_err(|e| match e {
                e @ (Error::Divergence { .. } | Error::Incompatible { .. }) => e,
                other => Error::ClientFailed {
                    client: c.id(),
                    reason: other.to_string(),
                },
            }))
            .collect()
    }
}

/// Runs `config.rounds` rounds; `server` present means federated.
///
/// `on_round` sees each report and, when federated, the aggregated weights.
pub fn run_rounds(
    cohort: &mut dyn Cohort,
    mut server: Option<&mut ServerState>,
    config: &TrainConfig,
    on_round: &mut dyn FnMut(&RoundReport, Option<&WeightSet>) -> Result<()>,
) -> Result<Vec<RoundReport>> {
    config.validate()?;
    let registry = cohort.registry();
    let mut reports = Vec::with_capacity(config.rounds);
    for round in 1..=config.rounds {
        let input = match server.as_deref() {
            Some(s) => Distribution::Shared(s.theta_global()),
            None => Distribution::Own,
        };
        let updates = cohort.run_round(round, input)?;
        let entries = registry
            .iter()
            .map(|&(k, n)| {
                updates
                    .iter()
                    .find(|u| u.client == k)
                    .map(|u| (k, n, u.losses))
                    .ok_or(Error::IncompleteRound { round, client: k })
            })
            .collect::<Result<Vec<_>>>()?;
        let theta = match server.as_deref_mut() {
            Some(s) => {
                let pairs: Vec<_> = updates.iter().map(|u| (u.client, &u.theta_global)).collect();
                Some(s.aggregate(&pairs)?.clone())
            }
            None => None,
        };
        let report = RoundReport::new(round, entries);
        on_round(&report, theta.as_ref())?;
        reports.push(report);
    }
    Ok(reports)
}

/// Result of a run: reports and, per client, its best snapshot.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub reports: Vec<RoundReport>,
    pub best: Vec<BestModel>,
}

fn collect_best(clients: &[ClientState]) -> Result<Vec<BestModel>> {
    clients
        .iter()
        .map(|c| c.best().cloned().ok_or_else(|| contract(format!("client {} never trained", c.id()))))
        .collect()
}

/// Federated training of clients whose fold is already installed. The server
/// starts from the first client's global weights, which every client shares
/// at initialization.
pub fn run_federation(clients: &mut [ClientState], config: &TrainConfig) -> Result<Outcome> {
    run_federation_logged(clients, config, &mut |_, _| Ok(()))
}

pub fn run_federation_logged(
    clients: &mut [ClientState],
    config: &TrainConfig,
    on_round: &mut dyn FnMut(&RoundReport, Option<&WeightSet>) -> Result<()>,
) -> Result<Outcome> {
    let first = clients.first().ok_or_else(|| contract("federation needs at least one client"))?;
    let theta = first.model().global_weights().clone();
    let mut cohort = LocalCohort {
        epochs: config.local_epochs,
        clients: &mut *clients,
    };
    let mut server = ServerState::new(theta, cohort.registry())?;
    let reports = run_rounds(&mut cohort, Some(&mut server), config, on_round)?;
    Ok(Outcome {
        reports,
        best: collect_best(clients)?,
    })
}

/// Isolated training of one client: the same loop without aggregation.
pub fn run_baseline(client: &mut ClientState, config: &TrainConfig) -> Result<Outcome> {
    run_baseline_logged(std::slice::from_mut(client), config, &mut |_, _| Ok(()))
}

/// Baseline over several clients at once; none influences another.
pub fn run_baseline_logged(
    clients: &mut [ClientState],
    config: &TrainConfig,
    on_round: &mut dyn FnMut(&RoundReport, Option<&WeightSet>) -> Result<()>,
) -> Result<Outcome> {
    let mut cohort = LocalCohort {
        epochs: config.local_epochs,
        clients: &mut *clients,
    };
    let reports = run_rounds(&mut cohort, None, config, on_round)?;
    Ok(Outcome {
        reports,
        best: collect_best(clients)?,
    })
}
