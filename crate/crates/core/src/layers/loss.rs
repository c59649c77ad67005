use crate::error::{contract, shape_err, Result};
use crate::tensor::Tensor4;

#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean negative log-likelihood of the true class.
    pub loss: f64,
    pub probs: Vec<[f64; 2]>,
    /// `(probs - onehot) / batch`, dims `(B, 2, 1, 1)`.
    pub grad_logits: Tensor4,
}

/// Two-class probabilities from a pair of logits, stabilized by max subtraction.
pub fn softmax2(l0: f64, l1: f64) -> [f64; 2] {
    let m = l0.max(l1);
    let e0 = (l0 - m).exp();
    let e1 = (l1 - m).exp();
    let s = e0 + e1;
    [e0 / s, e1 / s]
}

pub fn softmax_probs(logits: &Tensor4) -> Result<Vec<[f64; 2]>> {
    check_logits(logits)?;
    Ok(logits.data().chunks_exact(2).map(|l| softmax2(l[0], l[1])).collect())
}

fn check_logits(logits: &Tensor4) -> Result<()> {
    let [b, m, h, w] = logits.dims();
    if m != 2 || h != 1 || w != 1 {
        return Err(shape_err("softmax_cross_entropy", [b, 2, 1, 1], logits.dims()));
    }
    Ok(())
}

pub fn softmax_cross_entropy(logits: &Tensor4, labels: &[u8]) -> Result<LossOutput> {
    check_logits(logits)?;
    let batch = logits.batch();
    if labels.len() != batch {
        return Err(contract(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(contract(format!("label {bad} outside {{0,1}}")));
    }
    if batch == 0 {
        return Err(contract("empty batch"));
    }
    let inv = 1.0 / batch as f64;
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(batch);
    let mut grad = Vec::with_capacity(2 * batch);
    for (l, &y) in logits.data().chunks_exact(2).zip(labels) {
        let (l0, l1) = (l[0], l[1]);
        let m = l0.max(l1);
        let lse = m + ((l0 - m).exp() + (l1 - m).exp()).ln();
        let true_logit = if y == 0 { l0 } else { l1 };
        loss += lse - true_logit;
        let p = softmax2(l0, l1);
        grad.push((p[0] - f64::from(u8::from(y == 0))) * inv);
        grad.push((p[1] - f64::from(y)) * inv);
        probs.push(p);
    }
    Ok(LossOutput {
        loss: loss * inv,
        probs,
        grad_logits: Tensor4::from_raw([batch, 2, 1, 1], grad),
    })
}
