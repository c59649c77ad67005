//! Runs every fold of a fold plan, federated or isolated.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{plan_folds, FoldPlan, TrialStore};
use crate::error::{contract, Result};
use crate::evaluation::FoldReport;
use crate::federation::{
    run_baseline_logged, run_federation_logged, BestModel, ClientHyper, ClientState, RoundReport, TrainConfig,
};
use crate::model::PersonalizedModel;
use crate::weights::WeightSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Federated,
    Baseline,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Federated => "federated",
            Mode::Baseline => "baseline",
        }
    }
}

/// What one client brings to a run.
#[derive(Clone, Debug)]
pub struct ClientSetup {
    pub name: String,
    pub store: Arc<TrialStore>,
    pub model: PersonalizedModel,
    pub hyper: ClientHyper,
}

#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: usize,
    pub reports: Vec<RoundReport>,
    pub report: FoldReport,
    /// Indexed by client id.
    pub best: Vec<BestModel>,
}

pub enum Event<'a> {
    Round {
        fold: usize,
        report: &'a RoundReport,
        theta_global: Option<&'a WeightSet>,
    },
    Fold(&'a FoldOutcome),
}

pub fn make_clients(setups: &[ClientSetup], seed: u64) -> Result<Vec<ClientState>> {
    setups
        .iter()
        .enumerate()
        .map(|(k, s)| ClientState::new(k, s.model.clone(), s.store.clone(), s.hyper, seed))
        .collect()
}

pub fn plan_for(setups: &[ClientSetup], seed: u64) -> Result<Vec<FoldPlan>> {
    let stores: Vec<&TrialStore> = setups.iter().map(|s| s.store.as_ref()).collect();
    plan_folds(&stores, seed)
}

/// Trains and tests every fold of `plans` in order.
pub fn run_folds(
    setups: &[ClientSetup],
    plans: &[FoldPlan],
    config: &TrainConfig,
    mode: Mode,
    observer: &mut dyn FnMut(Event<'_>) -> Result<()>,
) -> Result<Vec<FoldOutcome>> {
    config.validate()?;
    let mut clients = make_clients(setups, config.seed)?;
    let mut outcomes = Vec::with_capacity(plans.len());
    for plan in plans {
        if plan.clients.len() != clients.len() {
            return Err(contract(format!(
                "fold {} plans {} clients, run has {}",
                plan.fold,
                plan.clients.len(),
                clients.len()
            )));
        }
        for (c, p) in clients.iter_mut().zip(&plan.clients) {
            c.begin_fold(plan.fold, p.clone())?;
        }
        let fold = plan.fold;
        let mut on_round = |report: &RoundReport, theta: Option<&WeightSet>| {
            observer(Event::Round {
                fold,
                report,
                theta_global: theta,
            })
        };
        let outcome = match mode {
            Mode::Federated => run_federation_logged(&mut clients, config, &mut on_round)?,
            Mode::Baseline => run_baseline_logged(&mut clients, config, &mut on_round)?,
        };
        let results = clients
            .iter()
            .map(|c| c.finish_fold().map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        let done = FoldOutcome {
            fold,
            reports: outcome.reports,
            report: FoldReport { fold, clients: results },
            best: outcome.best,
        };
        observer(Event::Fold(&done))?;
        outcomes.push(done);
    }
    Ok(outcomes)
}
