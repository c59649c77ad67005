//! Accuracy, the relative improvement statistic, per-subject summaries and
//! input-gradient saliency.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::TrialStore;
use crate::error::{contract, shape_err, Error, Result};
use crate::federation::ClientFoldResult;
use crate::layers::loss::softmax_cross_entropy;
use crate::model::PersonalizedModel;
use crate::tensor::Tensor4;

/// Predicted class; ties go to class 0.
pub fn predict(p: [f64; 2]) -> u8 {
    u8::from(p[1] > p[0])
}

/// Fraction of `probs` whose predicted class equals the label.
pub fn accuracy_from_probs(probs: &[[f64; 2]], labels: &[u8]) -> Result<f64> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(contract(format!(
            "accuracy needs matching non-empty predictions ({}) and labels ({})",
            probs.len(),
            labels.len()
        )));
    }
    let correct = probs.iter().zip(labels).filter(|(p, &y)| predict(**p) == y).count();
    Ok(correct as f64 / probs.len() as f64)
}

/// Mean cross-entropy and accuracy of `model` on the selected trials,
/// computed `chunk` trials at a time.
pub fn evaluate(model: &PersonalizedModel, store: &TrialStore, indices: &[usize], chunk: usize) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(contract("cannot evaluate on an empty trial set"));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for part in indices.chunks(chunk.max(1)) {
        let (x, y) = store.batch(part);
        let out = softmax_cross_entropy(&model.logits(x)?, &y)?;
        loss += out.loss * part.len() as f64;
        correct += out.probs.iter().zip(&y).filter(|(p, &y)| predict(**p) == y).count();
    }
    Ok((loss / indices.len() as f64, correct as f64 / indices.len() as f64))
}

pub fn accuracy(model: &PersonalizedModel, store: &TrialStore, indices: &[usize]) -> Result<f64> {
    Ok(evaluate(model, store, indices, crate::federation::EVAL_CHUNK)?.1)
}

/// `(acc_fl - acc_base) / acc_base`.
pub fn improvement(acc_fl: f64, acc_base: f64) -> Result<f64> {
    if !(acc_base > 0.0) {
        return Err(contract(format!("baseline accuracy {acc_base} must be > 0")));
    }
    Ok((acc_fl - acc_base) / acc_base)
}

/// Per-channel saliency scores of one client's subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMap {
    pub client: usize,
    pub subject: usize,
    pub scores: Vec<f64>,
}

impl SaliencyMap {
    /// `channel,score` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("channel,score\n");
        for (c, v) in self.scores.iter().enumerate() {
            writeln!(s, "{c},{v:e}").unwrap();
        }
        s
    }

    /// Rank of each channel by descending score, 0 for the highest; ties
    /// keep channel order.
    pub fn ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]));
        let mut ranks = vec![0; order.len()];
        for (r, c) in order.into_iter().enumerate() {
            ranks[c] = r;
        }
        ranks
    }
}

/// `|d logit_y / d x|` averaged over time, one score vector per trial of a
/// `(B, 1, C, T)` batch.
pub fn saliency_batch(model: &PersonalizedModel, batch: Tensor4, labels: &[u8]) -> Result<Vec<Vec<f64>>> {
    let [b, _, c, t] = batch.dims();
    if labels.len() != b {
        return Err(shape_err("saliency labels", b, labels.len()));
    }
    let (logits, tape) = model.forward(batch)?;
    let mut seed = Tensor4::zeros(logits.dims());
    for (i, &y) in labels.iter().enumerate() {
        if y > 1 {
            return Err(contract(format!("label {y} at trial {i}")));
        }
        let o = seed.offset(i, y as usize, 0, 0);
        seed.data_mut()[o] = 1.0;
    }
    let (grad, _, _) = model.backward(tape, seed, true)?;
    let grad = grad.expect("input gradient requested");
    Ok((0..b)
        .map(|i| {
            grad.sample(i)
                .chunks_exact(t)
                .take(c)
                .map(|row| row.iter().map(|v| v.abs()).sum::<f64>() / t as f64)
                .collect()
        })
        .collect())
}

/// Saliency of a single `(1, 1, C, T)` trial with true label `label`.
pub fn saliency(model: &PersonalizedModel, trial: &Tensor4, label: u8) -> Result<Vec<f64>> {
    Ok(saliency_batch(model, trial.clone(), &[label])?.remove(0))
}

/// Mean saliency over the selected trials of one subject.
pub fn subject_saliency(
    model: &PersonalizedModel,
    store: &TrialStore,
    indices: &[usize],
    client: usize,
    subject: usize,
) -> Result<SaliencyMap> {
    if indices.is_empty() {
        return Err(contract("saliency needs at least one trial"));
    }
    let mut scores = vec![0.0; store.format().channels];
    for part in indices.chunks(crate::federation::EVAL_CHUNK) {
        let (x, y) = store.batch(part);
        for s in saliency_batch(model, x, &y)? {
            for (acc, v) in scores.iter_mut().zip(s) {
                *acc += v;
            }
        }
    }
    for s in &mut scores {
        *s /= indices.len() as f64;
    }
    Ok(SaliencyMap { client, subject, scores })
}

/// Test results of every client for one fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub clients: Vec<ClientFoldResult>,
}

/// Accuracy of one subject averaged over the folds that held it out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub client: usize,
    pub subject: usize,
    pub accuracy: f64,
    pub repetitions: usize,
}

/// Per-subject means in `(client, subject)` order.
pub fn subject_results(folds: &[FoldReport]) -> Vec<SubjectResult> {
    let mut acc: BTreeMap<(usize, usize), Vec<(usize, f64)>> = BTreeMap::new();
    for f in folds {
        for c in &f.clients {
            acc.entry((c.client, c.held_out)).or_default().push((f.fold, c.test_acc));
        }
    }
    acc.into_iter()
        .map(|((client, subject), mut v)| {
            // sum in fold order so the result ignores report order
            v.sort_by_key(|e| e.0);
            SubjectResult {
                client,
                subject,
                accuracy: v.iter().map(|e| e.1).sum::<f64>() / v.len() as f64,
                repetitions: v.len(),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectRow {
    pub client: usize,
    pub subject: usize,
    pub acc_fl: f64,
    pub acc_base: f64,
    /// `None` when the baseline accuracy is zero.
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientRow {
    pub client: usize,
    pub acc_fl: f64,
    pub acc_base: f64,
    pub improvement: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub subjects: Vec<SubjectRow>,
    pub clients: Vec<ClientRow>,
}

fn fold_key(folds: &[FoldReport]) -> Vec<(usize, Vec<(usize, usize)>)> {
    let mut k: Vec<_> = folds
        .iter()
        .map(|f| {
            let mut c: Vec<_> = f.clients.iter().map(|c| (c.client, c.held_out)).collect();
            c.sort_unstable();
            (f.fold, c)
        })
        .collect();
    k.sort();
    k
}

/// Pairs federated and baseline folds, averages repeated subjects, then
/// subjects per client.
pub fn summarize(federated: &[FoldReport], baseline: &[FoldReport]) -> Result<Summary> {
    if federated.is_empty() {
        return Err(contract("nothing to summarize"));
    }
    let (a, b) = (fold_key(federated), fold_key(baseline));
    if a != b {
        let first = a.iter().zip(&b).position(|(x, y)| x != y).unwrap_or(a.len().min(b.len()));
        return Err(Error::Pairing(format!(
            "{} federated vs {} baseline folds; first difference at position {first}",
            a.len(),
            b.len()
        )));
    }
    let fl = subject_results(federated);
    let base = subject_results(baseline);
    let subjects: Vec<SubjectRow> = fl
        .iter()
        .zip(&base)
        .map(|(f, b)| SubjectRow {
            client: f.client,
            subject: f.subject,
            acc_fl: f.accuracy,
            acc_base: b.accuracy,
            improvement: improvement(f.accuracy, b.accuracy).ok(),
        })
        .collect();
    let mut per_client: BTreeMap<usize, Vec<&SubjectRow>> = BTreeMap::new();
    for r in &subjects {
        per_client.entry(r.client).or_default().push(r);
    }
    let clients = per_client
        .into_iter()
        .map(|(client, rows)| {
            let n = rows.len() as f64;
            let acc_fl = rows.iter().map(|r| r.acc_fl).sum::<f64>() / n;
            let acc_base = rows.iter().map(|r| r.acc_base).sum::<f64>() / n;
            ClientRow {
                client,
                acc_fl,
                acc_base,
                improvement: improvement(acc_fl, acc_base).ok(),
            }
        })
        .collect();
    Ok(Summary { subjects, clients })
}

impl Summary {
    /// `client,subject,acc_fl,acc_base,improvement`: one row per subject, then
    /// one `mean` row per client. `names` maps client ids to names.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let imp = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let mut s = String::from("client,subject,acc_fl,acc_base,improvement\n");
        for r in &self.subjects {
            writeln!(s, "{},{},{},{},{}", name(r.client), r.subject, r.acc_fl, r.acc_base, imp(r.improvement)).unwrap();
        }
        for r in &self.clients {
            writeln!(s, "{},mean,{},{},{}", name(r.client), r.acc_fl, r.acc_base, imp(r.improvement)).unwrap();
        }
        s
    }
}
