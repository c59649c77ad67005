//! Sequential conv/pool/ELU stacks whose parameters live in a [`WeightSet`].

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Error, Result};
use crate::layers::conv::{conv2d_backward, conv2d_forward_owned, conv_output_dims, ConvTape};
use crate::layers::elu::{elu_backward, elu_forward_owned, EluTape};
use crate::layers::pool::{maxpool_backward, maxpool_forward, PoolLayer, PoolTape};
use crate::tensor::Tensor4;
use crate::weights::WeightSet;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        name: String,
        kernels: usize,
        kernel: (usize, usize),
    },
    Pool {
        window: (usize, usize),
    },
    Elu,
}

impl LayerSpec {
    pub fn conv(name: &str, kernels: usize, kh: usize, kw: usize) -> Self {
        Self::Conv {
            name: name.to_string(),
            kernels,
            kernel: (kh, kw),
        }
    }

    pub fn pool(pw: usize) -> Self {
        Self::Pool { window: (1, pw) }
    }
}

/// One line of an architecture summary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub kernel: Option<(usize, usize)>,
    pub pool: Option<(usize, usize)>,
    pub output: [usize; 4],
}

#[derive(Debug)]
enum LayerTape {
    Conv(ConvTape),
    Pool(PoolTape),
    Elu(EluTape),
}

/// Layer inputs recorded by [`Network::forward`]; consumed by [`Network::backward`].
#[derive(Debug)]
pub struct NetworkTape {
    entries: Vec<LayerTape>,
    input_dims: [usize; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<LayerSpec>,
    weights: WeightSet,
    /// `(maps, height, width)` of one input sample.
    input: [usize; 3],
}

fn pool_of(window: (usize, usize)) -> PoolLayer {
    PoolLayer { window }
}

/// Glorot-uniform kernels, zero bias.
fn glorot(dims: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4 {
    let [out, inp, kh, kw] = dims;
    let fan_in = (inp * kh * kw) as f64;
    let fan_out = (out * kh * kw) as f64;
    let bound = (6.0 / (fan_in + fan_out)).sqrt();
    let n = dims.iter().product();
    Tensor4::from_raw(dims, (0..n).map(|_| rng.gen_range(-bound..bound)).collect())
}

impl Network {
    /// Builds the stack for inputs of shape `(maps, height, width)`.
    ///
    /// `init` receives the conv index (0-based over conv layers) and returns the
    /// RNG for that layer's kernel.
    pub fn new(
        layers: Vec<LayerSpec>,
        input: [usize; 3],
        mut init: impl FnMut(usize) -> ChaCha8Rng,
    ) -> Result<Self> {
        let mut weights = WeightSet::default();
        let mut dims = [1, input[0], input[1], input[2]];
        let mut conv_index = 0;
        for layer in &layers {
            dims = match layer {
                LayerSpec::Conv { name, kernels, kernel } => {
                    let kdims = [*kernels, dims[1], kernel.0, kernel.1];
                    let out = conv_output_dims(dims, kdims).map_err(|e| at_layer(e, name))?;
                    weights.push(format!("{name}.kernel"), glorot(kdims, &mut init(conv_index)));
                    weights.push(format!("{name}.bias"), Tensor4::zeros([1, 1, 1, *kernels]));
                    conv_index += 1;
                    out
                }
                LayerSpec::Pool { window } => pool_of(*window)
                    .output_dims(dims)
                    .map_err(|e| at_layer(e, &format!("pool{window:?}")))?,
                LayerSpec::Elu => dims,
            };
        }
        Ok(Self { layers, weights, input })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn weights(&self) -> &WeightSet {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut WeightSet {
        &mut self.weights
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input
    }

    /// Replace all parameters; `weights` must be compatible with the current set.
    pub fn set_weights(&mut self, weights: WeightSet) -> Result<()> {
        self.weights.check_compatible(&weights)?;
        self.weights = weights;
        Ok(())
    }

    pub fn output_dims(&self, batch: usize) -> [usize; 4] {
        self.summary(batch).last().map(|s| s.output).unwrap_or([
            batch,
            self.input[0],
            self.input[1],
            self.input[2],
        ])
    }

    pub fn summary(&self, batch: usize) -> Vec<LayerSummary> {
        let mut dims = [batch, self.input[0], self.input[1], self.input[2]];
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                LayerSpec::Conv { name, kernels, kernel } => {
                    dims = [batch, *kernels, dims[2] + 1 - kernel.0, dims[3] + 1 - kernel.1];
                    out.push(LayerSummary {
                        name: name.clone(),
                        kernel: Some(*kernel),
                        pool: None,
                        output: dims,
                    });
                }
                LayerSpec::Pool { window } => {
                    dims = [batch, dims[1], dims[2] / window.0, dims[3] / window.1];
                    if let Some(last) = out.last_mut() {
                        last.pool = Some(*window);
                        last.output = dims;
                    }
                }
                LayerSpec::Elu => {}
            }
        }
        out
    }

    /// `name kernel=(h,w) pool=(h,w) out=[m,h,w]`, one line per conv layer.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        for l in self.summary(1) {
            let fmt = |p: Option<(usize, usize)>| {
                p.map(|(a, b)| format!("({a},{b})")).unwrap_or_else(|| "-".into())
            };
            let _ = writeln!(
                s,
                "{} kernel={} pool={} out=[{},{},{}]",
                l.name,
                fmt(l.kernel),
                fmt(l.pool),
                l.output[1],
                l.output[2],
                l.output[3]
            );
        }
        s
    }

    fn check_input(&self, input: &Tensor4) -> Result<()> {
        let [_, m, h, w] = input.dims();
        if [m, h, w] != self.input {
            return Err(Error::Shape {
                op: format!("network input (first layer {})", self.first_name()),
                expected: format!("[B, {}, {}, {}]", self.input[0], self.input[1], self.input[2]),
                found: format!("{:?}", input.dims()),
            });
        }
        Ok(())
    }

    fn first_name(&self) -> &str {
        self.layers
            .iter()
            .find_map(|l| match l {
                LayerSpec::Conv { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .unwrap_or("-")
    }

    fn run(&self, input: Tensor4, record: bool) -> Result<(Tensor4, Option<NetworkTape>)> {
        self.check_input(&input)?;
        let input_dims = input.dims();
        let mut entries = Vec::with_capacity(if record { self.layers.len() } else { 0 });
        let mut x = input;
        let mut param = 0;
        for layer in &self.layers {
            x = match layer {
                LayerSpec::Conv { name, .. } => {
                    let kernels = self.weights.get(param);
                    let bias = self.weights.get(param + 1).data();
                    param += 2;
                    let (y, tape) =
                        conv2d_forward_owned(x, kernels, bias).map_err(|e| at_layer(e, name))?;
                    if record {
                        entries.push(LayerTape::Conv(tape));
                    }
                    y
                }
                LayerSpec::Pool { window } => {
                    let (y, tape) = maxpool_forward(&x, &pool_of(*window))?;
                    if record {
                        entries.push(LayerTape::Pool(tape));
                    }
                    y
                }
                LayerSpec::Elu => {
                    let (y, tape) = elu_forward_owned(x);
                    if record {
                        entries.push(LayerTape::Elu(tape));
                    }
                    y
                }
            };
            x.debug_check_finite("network layer")?;
        }
        Ok((x, record.then_some(NetworkTape { entries, input_dims })))
    }

    pub fn forward(&self, input: Tensor4) -> Result<(Tensor4, NetworkTape)> {
        let (y, tape) = self.run(input, true)?;
        Ok((y, tape.expect("recorded")))
    }

    pub fn infer(&self, input: Tensor4) -> Result<Tensor4> {
        Ok(self.run(input, false)?.0)
    }

    /// Returns the input gradient (when requested) and parameter gradients in
    /// the same layout as [`Network::weights`].
    pub fn backward(
        &self,
        tape: NetworkTape,
        grad_out: Tensor4,
        want_input: bool,
    ) -> Result<(Option<Tensor4>, WeightSet)> {
        if tape.entries.len() != self.layers.len() {
            return Err(contract("network tape does not belong to this network"));
        }
        let mut grads = self.weights.zeros_like();
        let mut param = self.weights.len();
        let mut g = grad_out;
        let first_conv = self
            .layers
            .iter()
            .position(|l| matches!(l, LayerSpec::Conv { .. }));
        let mut entries = tape.entries;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let entry = entries.pop().expect("length checked");
            g = match (layer, entry) {
                (LayerSpec::Conv { .. }, LayerTape::Conv(t)) => {
                    param -= 2;
                    let need = want_input || Some(i) != first_conv;
                    let cg = conv2d_backward(t, self.weights.get(param), &g, need)?;
                    *grads.get_mut(param) = cg.kernels;
                    *grads.get_mut(param + 1) = Tensor4::from_raw([1, 1, 1, cg.bias.len()], cg.bias);
                    match cg.input {
                        Some(gx) => gx,
                        // nothing upstream of the first conv consumes a gradient
                        None => Tensor4::zeros([0, 0, 0, 0]),
                    }
                }
                (LayerSpec::Pool { .. }, LayerTape::Pool(t)) => maxpool_backward(t, &g)?,
                (LayerSpec::Elu, LayerTape::Elu(t)) => elu_backward(t, &g)?,
                _ => return Err(contract("network tape layer kinds do not match")),
            };
        }
        let input_grad = if want_input {
            if g.dims() != tape.input_dims {
                return Err(contract("input gradient shape drifted"));
            }
            Some(g)
        } else {
            None
        };
        Ok((input_grad, grads))
    }
}

fn at_layer(e: Error, layer: &str) -> Error {
    match e {
        Error::Shape { op, expected, found } => Error::Shape {
            op: format!("layer {layer}: {op}"),
            expected,
            found,
        },
        other => other,
    }
}
