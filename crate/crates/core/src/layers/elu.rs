use crate::error::{contract, Result};
use crate::tensor::Tensor4;

/// Output cached by [`elu_forward`]; the derivative is recovered from it.
#[derive(Debug)]
pub struct EluTape {
    output: Tensor4,
}

#[inline]
pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_forward(input: &Tensor4) -> (Tensor4, EluTape) {
    let out = input.map(elu);
    (out.clone(), EluTape { output: out })
}

pub(crate) fn elu_forward_owned(mut input: Tensor4) -> (Tensor4, EluTape) {
    input.data_mut().iter_mut().for_each(|v| *v = elu(*v));
    (input.clone(), EluTape { output: input })
}

pub fn elu_backward(tape: EluTape, grad_out: &Tensor4) -> Result<Tensor4> {
    if grad_out.dims() != tape.output.dims() {
        return Err(contract(format!(
            "elu tape recorded {:?}, gradient has {:?}",
            tape.output.dims(),
            grad_out.dims()
        )));
    }
    let mut g = tape.output;
    for (y, &d) in g.data_mut().iter_mut().zip(grad_out.data()) {
        // for x <= 0, f'(x) = exp(x) = f(x) + 1
        *y = if *y > 0.0 { d } else { d * (*y + 1.0) };
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_exp() {
        let x = Tensor4::new([1, 1, 1, 3], vec![-2.0, 0.0, 3.0]).unwrap();
        let (_, tape) = elu_forward(&x);
        let g = elu_backward(tape, &Tensor4::filled([1, 1, 1, 3], 1.0)).unwrap();
        assert!((g.data()[0] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.data()[1], 1.0);
        assert_eq!(g.data()[2], 1.0);
    }
}
