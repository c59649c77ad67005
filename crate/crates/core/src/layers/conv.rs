//! Valid (unpadded) stride-1 cross-correlation.

use crate::error::{contract, shape_err, Result};
use crate::gemm::{gemm, Mat};
use crate::tensor::Tensor4;

/// Convolution parameters: kernels `(out_maps, in_maps, kh, kw)` and one bias per kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernels: Tensor4,
    pub bias: Vec<f64>,
}

/// Input cached by [`conv2d_forward`], consumed by [`conv2d_backward`].
#[derive(Debug)]
pub struct ConvTape {
    input: Tensor4,
    kernel_dims: [usize; 4],
    out_dims: [usize; 4],
}

#[derive(Debug)]
pub struct ConvGrads {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor4>,
    pub kernels: Tensor4,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn new(kernels: Tensor4, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != kernels.batch() {
            return Err(shape_err("ConvLayer::new", kernels.batch(), bias.len()));
        }
        Ok(Self { kernels, bias })
    }

    pub fn forward(&self, input: &Tensor4) -> Result<(Tensor4, ConvTape)> {
        conv2d_forward(input, &self.kernels, &self.bias)
    }

    pub fn backward(&self, tape: ConvTape, grad_out: &Tensor4) -> Result<ConvGrads> {
        conv2d_backward(tape, &self.kernels, grad_out, true)
    }
}

pub fn conv_output_dims(input: [usize; 4], kernel: [usize; 4]) -> Result<[usize; 4]> {
    let [b, maps, h, w] = input;
    let [nk, in_maps, kh, kw] = kernel;
    if maps != in_maps || kh == 0 || kw == 0 || kh > h || kw > w {
        return Err(shape_err(
            "conv2d",
            format!("input with {in_maps} maps and extents >= ({kh},{kw})"),
            format!("input {input:?} for kernel {kernel:?}"),
        ));
    }
    Ok([b, nk, h - kh + 1, w - kw + 1])
}

/// Unfold one sample into a `(in_maps*kh*kw) x (oh*ow)` patch matrix.
fn im2col(x: &[f64], in_dims: [usize; 3], k: (usize, usize), out: (usize, usize), col: &mut [f64]) {
    let [maps, h, w] = in_dims;
    let (kh, kw) = k;
    let (oh, ow) = out;
    let p = oh * ow;
    for m in 0..maps {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((m * kh + i) * kw + j) * p;
                for y in 0..oh {
                    let src = (m * h + y + i) * w + j;
                    col[row + y * ow..row + (y + 1) * ow].copy_from_slice(&x[src..src + ow]);
                }
            }
        }
    }
}

/// Accumulate a patch-matrix gradient back onto one sample.
fn col2im(col: &[f64], in_dims: [usize; 3], k: (usize, usize), out: (usize, usize), dx: &mut [f64]) {
    let [maps, h, w] = in_dims;
    let (kh, kw) = k;
    let (oh, ow) = out;
    let p = oh * ow;
    for m in 0..maps {
        for i in 0..kh {
            for j in 0..kw {
                let row = ((m * kh + i) * kw + j) * p;
                for y in 0..oh {
                    let dst = (m * h + y + i) * w + j;
                    let src = &col[row + y * ow..row + (y + 1) * ow];
                    for (d, s) in dx[dst..dst + ow].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(input: &Tensor4, kernels: &Tensor4, bias: &[f64]) -> Result<(Tensor4, ConvTape)> {
    conv2d_forward_owned(input.clone(), kernels, bias)
}

/// As [`conv2d_forward`], moving the input into the tape instead of copying it.
pub fn conv2d_forward_owned(
    input: Tensor4,
    kernels: &Tensor4,
    bias: &[f64],
) -> Result<(Tensor4, ConvTape)> {
    let out_dims = conv_output_dims(input.dims(), kernels.dims())?;
    let [nk, in_maps, kh, kw] = kernels.dims();
    if bias.len() != nk {
        return Err(shape_err("conv2d bias", nk, bias.len()));
    }
    let [batch, _, h, w] = input.dims();
    let (oh, ow) = (out_dims[2], out_dims[3]);
    let p = oh * ow;
    let kdim = in_maps * kh * kw;

    let mut out = vec![0.0; batch * nk * p];
    let mut col = vec![0.0; kdim * p];
    let kmat = Mat::new(kernels.data(), nk, kdim);
    for b in 0..batch {
        im2col(input.sample(b), [in_maps, h, w], (kh, kw), (oh, ow), &mut col);
        let dst = &mut out[b * nk * p..(b + 1) * nk * p];
        for (row, &bv) in dst.chunks_exact_mut(p).zip(bias) {
            row.fill(bv);
        }
        gemm(kmat, Mat::new(&col, kdim, p), 1.0, dst);
    }
    let out = Tensor4::from_raw(out_dims, out);
    let tape = ConvTape {
        input,
        kernel_dims: kernels.dims(),
        out_dims,
    };
    Ok((out, tape))
}

/// Gradients of a convolution given the upstream gradient of its output.
///
/// `want_input` skips the input gradient, which the first layer of a network never needs.
pub fn conv2d_backward(
    tape: ConvTape,
    kernels: &Tensor4,
    grad_out: &Tensor4,
    want_input: bool,
) -> Result<ConvGrads> {
    if kernels.dims() != tape.kernel_dims {
        return Err(contract(format!(
            "conv tape recorded kernels {:?}, backward given {:?}",
            tape.kernel_dims,
            kernels.dims()
        )));
    }
    if grad_out.dims() != tape.out_dims {
        return Err(contract(format!(
            "conv tape recorded output {:?}, gradient has {:?}",
            tape.out_dims,
            grad_out.dims()
        )));
    }
    let [nk, in_maps, kh, kw] = kernels.dims();
    let [batch, _, h, w] = tape.input.dims();
    let (oh, ow) = (tape.out_dims[2], tape.out_dims[3]);
    let p = oh * ow;
    let kdim = in_maps * kh * kw;

    let mut gk = vec![0.0; nk * kdim];
    let mut gb = vec![0.0; nk];
    let mut gx = if want_input {
        Some(vec![0.0; tape.input.len()])
    } else {
        None
    };
    let mut col = vec![0.0; kdim * p];
    let mut gcol = vec![0.0; if want_input { kdim * p } else { 0 }];
    let kmat = Mat::new(kernels.data(), nk, kdim);
    let sample_len = in_maps * h * w;
    for b in 0..batch {
        let dy = grad_out.sample(b);
        for (g, row) in gb.iter_mut().zip(dy.chunks_exact(p)) {
            *g += row.iter().sum::<f64>();
        }
        im2col(tape.input.sample(b), [in_maps, h, w], (kh, kw), (oh, ow), &mut col);
        let dymat = Mat::new(dy, nk, p);
        gemm(dymat, Mat::new(&col, kdim, p).t(), 1.0, &mut gk);
        if let Some(gx) = gx.as_mut() {
            gemm(kmat.t(), dymat, 0.0, &mut gcol);
            col2im(
                &gcol,
                [in_maps, h, w],
                (kh, kw),
                (oh, ow),
                &mut gx[b * sample_len..(b + 1) * sample_len],
            );
        }
    }
    Ok(ConvGrads {
        input: gx.map(|g| Tensor4::from_raw(tape.input.dims(), g)),
        kernels: Tensor4::from_raw(kernels.dims(), gk),
        bias: gb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(dims: [usize; 4], v: &[f64]) -> Tensor4 {
        Tensor4::new(dims, v.to_vec()).unwrap()
    }

    #[test]
    fn one_dimensional_sum() {
        let x = t([1, 1, 1, 4], &[1.0, 2.0, 3.0, 4.0]);
        let layer = ConvLayer::new(t([1, 1, 1, 2], &[1.0, 1.0]), vec![0.0]).unwrap();
        let (y, tape) = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 3]);
        assert_eq!(y.data(), &[3.0, 5.0, 7.0]);

        let g = layer.backward(tape, &t([1, 1, 1, 3], &[1.0, 0.0, 0.0])).unwrap();
        assert_eq!(g.kernels.data(), &[1.0, 2.0]);
        assert_eq!(g.input.unwrap().data(), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(g.bias, vec![1.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let x = t([1, 2, 2, 3], &[0.5, -1.0, 2.0, 3.0, 1.0, 0.0, 4.0, 4.0, -2.0, 1.0, 1.0, 1.0]);
        let layer = ConvLayer::new(t([1, 2, 1, 2], &[1.0, 2.0, 3.0, 4.0]), vec![0.3]).unwrap();
        let (y, tape) = layer.forward(&x).unwrap();
        let g = layer.backward(tape, &Tensor4::zeros(y.dims())).unwrap();
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.input.unwrap().data().iter().all(|&v| v == 0.0));
        assert_eq!(g.bias, vec![0.0]);
    }

    #[test]
    fn mismatched_maps_name_both_shapes() {
        let x = Tensor4::zeros([1, 3, 4, 4]);
        let k = Tensor4::zeros([2, 2, 1, 1]);
        let err = conv2d_forward(&x, &k, &[0.0, 0.0]).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 4, 4]") && err.contains("[2, 2, 1, 1]"), "{err}");
    }

    #[test]
    fn oversized_kernel_rejected() {
        let x = Tensor4::zeros([1, 1, 2, 4]);
        let k = Tensor4::zeros([1, 1, 3, 1]);
        assert!(conv2d_forward(&x, &k, &[0.0]).is_err());
    }

    #[test]
    fn tape_gradient_mismatch_is_contract_error() {
        let x = Tensor4::zeros([1, 1, 1, 4]);
        let layer = ConvLayer::new(Tensor4::zeros([1, 1, 1, 2]), vec![0.0]).unwrap();
        let (_, tape) = layer.forward(&x).unwrap();
        let err = layer.backward(tape, &Tensor4::zeros([1, 1, 1, 4])).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn ku_temporal_filter_shape() {
        let x = Tensor4::zeros([1, 1, 62, 1000]);
        let k = Tensor4::zeros([25, 1, 1, 10]);
        let (y, _) = conv2d_forward(&x, &k, &[0.0; 25]).unwrap();
        assert_eq!(y.dims(), [1, 25, 62, 991]);
    }
}
