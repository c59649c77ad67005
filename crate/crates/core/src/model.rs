//! The two-part personalized model: a format-specific local encoder followed by
//! the shared global classifier.

use crate::arch::{derive_arch, GlobalArch, LocalArch, FEATURE_MAPS, FEATURE_WIDTHS};
use crate::error::{shape_err, Result};
use crate::format::DatasetFormat;
use crate::layers::loss::{softmax_cross_entropy, softmax_probs};
use crate::network::{Network, NetworkTape};
use crate::rng::{keyed_rng, Stream, SERVER};
use crate::tensor::Tensor4;
use crate::weights::WeightSet;

/// Offset separating global-module layer indices from local ones in init keys.
const GLOBAL_LAYER_BASE: u64 = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct PersonalizedModel {
    local_arch: LocalArch,
    global_arch: GlobalArch,
    trial_samples: usize,
    local: Network,
    global: Network,
}

/// Tapes of both modules from one forward pass.
#[derive(Debug)]
pub struct ModelTape {
    local: NetworkTape,
    global: NetworkTape,
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub loss: f64,
    pub probs: Vec<[f64; 2]>,
    pub local: WeightSet,
    pub global: WeightSet,
}

/// Initial global-module weights, shared by every client of a run.
pub fn initial_global(global: &GlobalArch, seed: u64) -> Result<WeightSet> {
    // the global module's input shape does not affect parameter shapes
    let net = global_network(global, *FEATURE_WIDTHS.end(), seed)?;
    Ok(net.weights().clone())
}

fn global_network(global: &GlobalArch, width: usize, seed: u64) -> Result<Network> {
    Network::new(global.layers(), global.input_shape(width), |i| {
        keyed_rng(Stream::Init, &[seed, SERVER, GLOBAL_LAYER_BASE + i as u64])
    })
}

impl PersonalizedModel {
    /// Local weights keyed by `(seed, client, layer)`, global weights by `(seed, server, layer)`.
    pub fn new(
        local_arch: LocalArch,
        global_arch: GlobalArch,
        trial_samples: usize,
        seed: u64,
        client: u64,
    ) -> Result<Self> {
        let local = Network::new(local_arch.layers(), [1, local_arch.channels, trial_samples], |i| {
            keyed_rng(Stream::Init, &[seed, client, i as u64])
        })?;
        let feature = local.output_dims(1);
        if feature[1] != FEATURE_MAPS || feature[2] != 1 || !FEATURE_WIDTHS.contains(&feature[3]) {
            return Err(shape_err(
                "local module output",
                format!("[{FEATURE_MAPS}, 1, 30..=32]"),
                &feature[1..],
            ));
        }
        let global = global_network(&global_arch, feature[3], seed)?;
        Ok(Self {
            local_arch,
            global_arch,
            trial_samples,
            local,
            global,
        })
    }

    /// Derives a local architecture for `format` and initializes the model.
    pub fn for_format(format: &DatasetFormat, seed: u64, client: u64) -> Result<Self> {
        let arch = derive_arch(format)?;
        Self::new(arch, GlobalArch::default(), format.trial_samples, seed, client)
    }

    pub fn local_arch(&self) -> &LocalArch {
        &self.local_arch
    }

    pub fn global_arch(&self) -> &GlobalArch {
        &self.global_arch
    }

    pub fn local(&self) -> &Network {
        &self.local
    }

    pub fn global(&self) -> &Network {
        &self.global
    }

    pub fn local_mut(&mut self) -> &mut Network {
        &mut self.local
    }

    pub fn global_mut(&mut self) -> &mut Network {
        &mut self.global
    }

    pub fn modules_mut(&mut self) -> (&mut Network, &mut Network) {
        (&mut self.local, &mut self.global)
    }

    pub fn trial_samples(&self) -> usize {
        self.trial_samples
    }

    pub fn channels(&self) -> usize {
        self.local_arch.channels
    }

    pub fn feature_width(&self) -> usize {
        self.local.output_dims(1)[3]
    }

    pub fn num_params(&self) -> usize {
        self.local.weights().num_params() + self.global.weights().num_params()
    }

    /// Logits `(B, 2, 1, 1)` and the tapes needed for backward.
    pub fn forward(&self, batch: Tensor4) -> Result<(Tensor4, ModelTape)> {
        let (feature, local) = self.local.forward(batch)?;
        let (logits, global) = self.global.forward(feature)?;
        Ok((logits, ModelTape { local, global }))
    }

    pub fn logits(&self, batch: Tensor4) -> Result<Tensor4> {
        self.global.infer(self.local.infer(batch)?)
    }

    pub fn predict_proba(&self, batch: Tensor4) -> Result<Vec<[f64; 2]>> {
        softmax_probs(&self.logits(batch)?)
    }

    /// Backpropagate a logit gradient; optionally returns the input gradient.
    pub fn backward(
        &self,
        tape: ModelTape,
        grad_logits: Tensor4,
        want_input: bool,
    ) -> Result<(Option<Tensor4>, WeightSet, WeightSet)> {
        let (feature_grad, global) = self.global.backward(tape.global, grad_logits, true)?;
        let feature_grad = feature_grad.expect("requested");
        let (input_grad, local) = self.local.backward(tape.local, feature_grad, want_input)?;
        Ok((input_grad, local, global))
    }

    pub fn gradients(&self, batch: Tensor4, labels: &[u8]) -> Result<Gradients> {
        let (logits, tape) = self.forward(batch)?;
        let out = softmax_cross_entropy(&logits, labels)?;
        let (_, local, global) = self.backward(tape, out.grad_logits, false)?;
        Ok(Gradients {
            loss: out.loss,
            probs: out.probs,
            local,
            global,
        })
    }

    /// One SGD step on both modules; returns the batch loss before the step.
    pub fn train_step(&mut self, batch: Tensor4, labels: &[u8], eta: f64) -> Result<f64> {
        let g = self.gradients(batch, labels)?;
        self.local.weights_mut().apply_sgd(&g.local, eta)?;
        self.global.weights_mut().apply_sgd(&g.global, eta)?;
        Ok(g.loss)
    }

    pub fn split_weights(&self) -> (WeightSet, WeightSet) {
        (self.local.weights().clone(), self.global.weights().clone())
    }

    pub fn global_weights(&self) -> &WeightSet {
        self.global.weights()
    }

    pub fn local_weights(&self) -> &WeightSet {
        self.local.weights()
    }

    /// Installs new global weights; the local module is untouched.
    pub fn replace_global(&mut self, theta_global: WeightSet) -> Result<()> {
        self.global.set_weights(theta_global)
    }

    pub fn replace_local(&mut self, theta_local: WeightSet) -> Result<()> {
        self.local.set_weights(theta_local)
    }

    /// Summary of both modules, one line per conv layer.
    pub fn summary_text(&self) -> String {
        format!("{}{}", self.local.summary_text(), self.global.summary_text())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::build_from_table;

    fn small_format() -> DatasetFormat {
        DatasetFormat::new("small", 4, 100.0, 160, 2, 4).unwrap()
    }

    #[test]
    fn zero_head_gives_uniform_probs() {
        let mut m = PersonalizedModel::for_format(&small_format(), 3, 0).unwrap();
        let zeros = m.global_weights().zeros_like();
        m.replace_global(zeros).unwrap();
        let x = Tensor4::filled([3, 1, 4, 160], 0.3);
        for p in m.predict_proba(x).unwrap() {
            assert_eq!(p, [0.5, 0.5]);
        }
    }

    #[test]
    fn replace_global_round_trip_is_bit_exact() {
        let mut m = PersonalizedModel::for_format(&small_format(), 1, 2).unwrap();
        let before = m.clone();
        let (_, g) = m.split_weights();
        m.replace_global(g).unwrap();
        assert_eq!(m, before);
    }

    #[test]
    fn replace_global_rejects_local_shapes() {
        let mut m = PersonalizedModel::for_format(&small_format(), 1, 2).unwrap();
        let (l, _) = m.split_weights();
        assert!(matches!(m.replace_global(l), Err(crate::Error::Incompatible { index: 0, .. })));
    }

    #[test]
    fn global_shapes_match_across_formats() {
        let a = PersonalizedModel::for_format(&small_format(), 1, 0).unwrap();
        let b = PersonalizedModel::for_format(&DatasetFormat::new("b", 9, 250.0, 500, 2, 2).unwrap(), 8, 1)
            .unwrap();
        assert_eq!(a.global_weights().layout(), b.global_weights().layout());
        assert_eq!(a.global_weights().num_params(), 203_002);
        // same run seed, same initial global module
        let c = PersonalizedModel::for_format(&small_format(), 8, 0).unwrap();
        assert_eq!(b.global_weights(), c.global_weights());
    }

    #[test]
    fn ku_forward_shapes() {
        let (local, global) = build_from_table("KU").unwrap();
        let m = PersonalizedModel::new(local, global, 1000, 0, 0).unwrap();
        assert_eq!(m.feature_width(), 32);
        let widths: Vec<_> = m.global().summary(1).iter().map(|s| s.output[3]).collect();
        assert_eq!(widths, vec![7, 1]);
        let probs = m.predict_proba(Tensor4::zeros([4, 1, 62, 1000])).unwrap();
        assert_eq!(probs.len(), 4);
    }

    #[test]
    fn wrong_trial_shape_is_rejected() {
        let m = PersonalizedModel::for_format(&small_format(), 1, 0).unwrap();
        let err = m.logits(Tensor4::zeros([1, 1, 5, 160])).unwrap_err().to_string();
        assert!(err.contains("local.temporal"), "{err}");
    }
}
