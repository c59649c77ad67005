//! Central finite-difference gradient checking.

use rand::seq::index::sample;

use crate::error::{contract, Result};
use crate::layers::loss::softmax_cross_entropy;
use crate::model::PersonalizedModel;
use crate::network::Network;
use crate::rng::{keyed_rng, Stream};
use crate::tensor::Tensor4;
use crate::weights::WeightSet;

/// Models with at most this many parameters are checked exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 10_000;

/// Gradients below this magnitude are compared absolutely rather than relatively.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// A scalar loss over flat-indexed parameters.
pub trait Objective {
    fn param_sets(&mut self) -> Vec<&mut WeightSet>;
    fn loss(&self, input: &Tensor4, labels: &[u8]) -> Result<f64>;
    /// Analytic gradients in the same order as [`Objective::param_sets`].
    fn gradients(&self, input: &Tensor4, labels: &[u8]) -> Result<Vec<WeightSet>>;
}

impl Objective for PersonalizedModel {
    fn param_sets(&mut self) -> Vec<&mut WeightSet> {
        let (local, global) = self.modules_mut();
        vec![local.weights_mut(), global.weights_mut()]
    }

    fn loss(&self, input: &Tensor4, labels: &[u8]) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.logits(input.clone())?, labels)?.loss)
    }

    fn gradients(&self, input: &Tensor4, labels: &[u8]) -> Result<Vec<WeightSet>> {
        let g = PersonalizedModel::gradients(self, input.clone(), labels)?;
        Ok(vec![g.local, g.global])
    }
}

/// A bare network whose output is read as `(B, 2, 1, 1)` logits.
impl Objective for Network {
    fn param_sets(&mut self) -> Vec<&mut WeightSet> {
        vec![self.weights_mut()]
    }

    fn loss(&self, input: &Tensor4, labels: &[u8]) -> Result<f64> {
        Ok(softmax_cross_entropy(&self.infer(input.clone())?, labels)?.loss)
    }

    fn gradients(&self, input: &Tensor4, labels: &[u8]) -> Result<Vec<WeightSet>> {
        let (logits, tape) = self.forward(input.clone())?;
        let out = softmax_cross_entropy(&logits, labels)?;
        let (_, g) = self.backward(tape, out.grad_logits, false)?;
        Ok(vec![g])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    pub epsilon: f64,
    /// Parameters checked per weight entry when the model exceeds [`EXHAUSTIVE_LIMIT`].
    pub per_entry: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            per_entry: 16,
            seed: 0,
        }
    }
}

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Perturbations whose one-sided slopes disagree by more than this share of
/// their scale straddle a max-pool switch or an ELU kink.
pub const KINK_ASYMMETRY: f64 = 1e-3;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FdReport {
    /// Worst relative error against the central difference.
    pub max_error: f64,
    /// Worst relative error against the closest of the central and the two
    /// one-sided differences. Where `±epsilon` crosses a max-pool switch the
    /// analytic gradient matches the slope on the uncrossed side.
    pub max_kink_aware_error: f64,
    pub checked: usize,
    /// Parameters whose `±epsilon` neighbourhood is not differentiable.
    pub kinks: usize,
}

/// Maximum relative error between analytic and central-difference gradients.
///
/// Every parameter is perturbed when the model has at most
/// [`EXHAUSTIVE_LIMIT`] of them; otherwise a seeded subset of
/// `per_entry` parameters from each weight entry.
pub fn finite_diff_check<M: Objective>(
    model: &mut M,
    input: &Tensor4,
    labels: &[u8],
    opts: FdOptions,
) -> Result<f64> {
    Ok(finite_diff_report(model, input, labels, opts)?.max_error)
}

/// As [`finite_diff_check`], also separating parameters whose perturbation
/// crosses a non-differentiable point.
pub fn finite_diff_report<M: Objective>(
    model: &mut M,
    input: &Tensor4,
    labels: &[u8],
    opts: FdOptions,
) -> Result<FdReport> {
    if !(opts.epsilon > 0.0) {
        return Err(contract(format!("epsilon {} must be > 0", opts.epsilon)));
    }
    let analytic = model.gradients(input, labels)?;
    let base = model.loss(input, labels)?;
    let sizes: Vec<Vec<usize>> = model
        .param_sets()
        .iter()
        .map(|s| s.entries().iter().map(|e| e.value.len()).collect())
        .collect();
    let total: usize = sizes.iter().flatten().sum();

    let mut targets = Vec::new();
    let mut rng = keyed_rng(Stream::Subset, &[opts.seed]);
    for (set, entry_sizes) in sizes.iter().enumerate() {
        for (entry, &n) in entry_sizes.iter().enumerate() {
            if total <= EXHAUSTIVE_LIMIT || n <= opts.per_entry {
                targets.extend((0..n).map(|i| (set, entry, i)));
            } else {
                let mut picked = sample(&mut rng, n, opts.per_entry).into_vec();
                picked.sort_unstable();
                targets.extend(picked.into_iter().map(|i| (set, entry, i)));
            }
        }
    }

    let mut report = FdReport::default();
    for (set, entry, i) in targets {
        let original = model.param_sets()[set].get(entry).data()[i];
        model.param_sets()[set].get_mut(entry).data_mut()[i] = original + opts.epsilon;
        let plus = model.loss(input, labels)?;
        model.param_sets()[set].get_mut(entry).data_mut()[i] = original - opts.epsilon;
        let minus = model.loss(input, labels)?;
        model.param_sets()[set].get_mut(entry).data_mut()[i] = original;
        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let (fwd, bwd) = ((plus - base) / opts.epsilon, (base - minus) / opts.epsilon);
        let scale = fwd.abs().max(bwd.abs()).max(RELATIVE_FLOOR);
        let a = analytic[set].get(entry).data()[i];
        let err = relative_error(a, numeric);
        let aware = err.min(relative_error(a, fwd)).min(relative_error(a, bwd));
        report.checked += 1;
        report.max_error = report.max_error.max(err);
        report.max_kink_aware_error = report.max_kink_aware_error.max(aware);
        if (fwd - bwd).abs() > KINK_ASYMMETRY * scale {
            report.kinks += 1;
        }
    }
    Ok(report)
}
