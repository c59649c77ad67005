//! Non-overlapping max pooling (stride equals window, trailing remainder dropped).

use crate::error::{contract, shape_err, Result};
use crate::tensor::Tensor4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolLayer {
    pub window: (usize, usize),
}

/// Argmax positions recorded by [`maxpool_forward`].
#[derive(Debug)]
pub struct PoolTape {
    in_dims: [usize; 4],
    out_dims: [usize; 4],
    argmax: Vec<usize>,
}

impl PoolLayer {
    pub fn new(ph: usize, pw: usize) -> Result<Self> {
        if ph == 0 || pw == 0 {
            return Err(contract(format!("pool window ({ph},{pw}) has a zero extent")));
        }
        Ok(Self { window: (ph, pw) })
    }

    pub fn output_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let (ph, pw) = self.window;
        if ph == 0 || pw == 0 {
            return Err(contract(format!("pool window ({ph},{pw}) has a zero extent")));
        }
        if ph > input[2] || pw > input[3] {
            return Err(shape_err("maxpool", format!("extents >= ({ph},{pw})"), input));
        }
        Ok([input[0], input[1], input[2] / ph, input[3] / pw])
    }

    pub fn forward(&self, input: &Tensor4) -> Result<(Tensor4, PoolTape)> {
        maxpool_forward(input, self)
    }
}

pub fn maxpool_forward(input: &Tensor4, layer: &PoolLayer) -> Result<(Tensor4, PoolTape)> {
    let out_dims = layer.output_dims(input.dims())?;
    let (ph, pw) = layer.window;
    let [b, m, h, w] = input.dims();
    let (oh, ow) = (out_dims[2], out_dims[3]);
    let x = input.data();
    let mut out = Vec::with_capacity(b * m * oh * ow);
    let mut argmax = Vec::with_capacity(out.capacity());
    for plane in 0..b * m {
        let base = plane * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best_idx = base + y * ph * w + xo * pw;
                let mut best = x[best_idx];
                for i in 0..ph {
                    let row = base + (y * ph + i) * w + xo * pw;
                    for (j, &v) in x[row..row + pw].iter().enumerate() {
                        // strict comparison keeps the lowest flat index on ties
                        if v > best {
                            best = v;
                            best_idx = row + j;
                        }
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    Ok((
        Tensor4::from_raw(out_dims, out),
        PoolTape {
            in_dims: input.dims(),
            out_dims,
            argmax,
        },
    ))
}

pub fn maxpool_backward(tape: PoolTape, grad_out: &Tensor4) -> Result<Tensor4> {
    if grad_out.dims() != tape.out_dims {
        return Err(contract(format!(
            "pool tape recorded output {:?}, gradient has {:?}",
            tape.out_dims,
            grad_out.dims()
        )));
    }
    let mut gx = vec![0.0; tape.in_dims.iter().product()];
    for (&idx, &g) in tape.argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(Tensor4::from_raw(tape.in_dims, gx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_max_and_floor() {
        let x = Tensor4::new([1, 1, 1, 3], vec![3.0, 5.0, 7.0]).unwrap();
        let (y, _) = PoolLayer::new(1, 3).unwrap().forward(&x).unwrap();
        assert_eq!(y.data(), &[7.0]);

        let p3 = PoolLayer::new(1, 3).unwrap();
        assert_eq!(p3.output_dims([1, 100, 1, 98]).unwrap(), [1, 100, 1, 32]);
        let p5 = PoolLayer::new(1, 5).unwrap();
        assert_eq!(p5.output_dims([1, 25, 1, 991]).unwrap(), [1, 25, 1, 198]);
    }

    #[test]
    fn ties_route_to_lowest_index() {
        let x = Tensor4::new([1, 1, 1, 3], vec![2.0, 2.0, 2.0]).unwrap();
        let (_, tape) = PoolLayer::new(1, 3).unwrap().forward(&x).unwrap();
        let g = maxpool_backward(tape, &Tensor4::filled([1, 1, 1, 1], 1.0)).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_gradient_and_dropped_remainder() {
        let x = Tensor4::new([1, 1, 2, 5], (0..10).map(f64::from).collect()).unwrap();
        let (y, tape) = PoolLayer::new(2, 2).unwrap().forward(&x).unwrap();
        assert_eq!(y.dims(), [1, 1, 1, 2]);
        assert_eq!(y.data(), &[6.0, 8.0]);
        let g = maxpool_backward(tape, &Tensor4::zeros([1, 1, 1, 2])).unwrap();
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_window_is_contract_error() {
        assert!(matches!(PoolLayer::new(1, 0), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn mismatched_gradient_rejected() {
        let x = Tensor4::zeros([1, 1, 1, 6]);
        let (_, tape) = PoolLayer::new(1, 3).unwrap().forward(&x).unwrap();
        assert!(maxpool_backward(tape, &Tensor4::zeros([1, 1, 1, 3])).is_err());
    }
}
