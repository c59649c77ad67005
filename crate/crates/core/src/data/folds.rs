//! Approximate leave-one-subject-out fold plans.
//!
//! All clients run their folds simultaneously. There are `max_k S_k` folds;
//! client `k` holds out subject `f mod S_k` in fold `f`, so subjects of smaller
//! datasets are held out repeatedly. The remaining trials are shuffled with a
//! permutation keyed by `(seed, client, fold)` and the last tenth becomes the
//! validation partition.

use rand::seq::SliceRandom;

use crate::error::{contract, Result};
use crate::rng::{keyed_rng, Stream};

use super::store::TrialStore;

/// One client's partition of its trials for one fold. Indices refer to the
/// client's store.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientFold {
    pub held_out: usize,
    pub train_subjects: Vec<usize>,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub fold: usize,
    /// Indexed by client id.
    pub clients: Vec<ClientFold>,
}

/// Validation share of the non-held-out trials: a tenth, rounded, at least one.
pub fn validation_count(n: usize) -> usize {
    ((n + 5) / 10).max(1)
}

pub fn plan_folds(stores: &[&TrialStore], seed: u64) -> Result<Vec<FoldPlan>> {
    let subjects: Vec<Vec<usize>> = stores.iter().map(|s| s.subject_of_trials()).collect();
    let counts: Vec<usize> = stores.iter().map(|s| s.format().subjects).collect();
    plan_folds_for_subjects(&subjects, &counts, seed)
}

/// Plans folds from each client's per-trial subject ids and subject count.
pub fn plan_folds_for_subjects(
    subject_of_trial: &[Vec<usize>],
    subjects: &[usize],
    seed: u64,
) -> Result<Vec<FoldPlan>> {
    if subject_of_trial.is_empty() || subject_of_trial.len() != subjects.len() {
        return Err(contract("fold planning needs one subject list per client"));
    }
    for (k, &s) in subjects.iter().enumerate() {
        if s < 2 {
            return Err(contract(format!(
                "client {k} has {s} subject(s); leave-one-subject-out needs at least 2"
            )));
        }
        if let Some(bad) = subject_of_trial[k].iter().find(|&&t| t >= s) {
            return Err(contract(format!("client {k}: subject id {bad} out of range 0..{s}")));
        }
    }
    let folds = *subjects.iter().max().unwrap();
    (0..folds)
        .map(|f| {
            let clients = subject_of_trial
                .iter()
                .zip(subjects)
                .enumerate()
                .map(|(k, (trials, &s))| client_fold(trials, s, k, f, seed))
                .collect::<Result<_>>()?;
            Ok(FoldPlan { fold: f, clients })
        })
        .collect()
}

/// The folds of one client alone, identical to its entries in the joint
/// plan of a run with `folds` folds.
pub fn plan_client_folds(store: &TrialStore, client: usize, folds: usize, seed: u64) -> Result<Vec<ClientFold>> {
    let subjects = store.format().subjects;
    if subjects < 2 {
        return Err(contract(format!(
            "client {client} has {subjects} subject(s); leave-one-subject-out needs at least 2"
        )));
    }
    let trials = store.subject_of_trials();
    (0..folds).map(|f| client_fold(&trials, subjects, client, f, seed)).collect()
}

fn client_fold(trials: &[usize], subjects: usize, client: usize, fold: usize, seed: u64) -> Result<ClientFold> {
    let held_out = fold % subjects;
    let (test, mut rest): (Vec<usize>, Vec<usize>) = (0..trials.len()).partition(|&i| trials[i] == held_out);
    if rest.len() < 2 {
        return Err(contract(format!(
            "client {client}, fold {fold}: {} trial(s) outside subject {held_out}, need at least 2",
            rest.len()
        )));
    }
    rest.shuffle(&mut keyed_rng(Stream::Folds, &[seed, client as u64, fold as u64]));
    let validation = rest.split_off(rest.len() - validation_count(rest.len()));
    Ok(ClientFold {
        held_out,
        train_subjects: (0..subjects).filter(|&s| s != held_out).collect(),
        train: rest,
        validation,
        test,
    })
}
