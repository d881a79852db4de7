use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[inline]
pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn activation<T: Scalar>(input: &Tensor<T>, mode: Activation) -> Tensor<T> {
    match mode {
        Activation::Relu => input.map(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::Sigmoid => input.map(sigmoid_scalar),
    }
}

/// Gradient given the forward *output* (both activations are recoverable from it).
pub fn activation_backward<T: Scalar>(output: &Tensor<T>, mode: Activation, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    output.same_shape(grad_out, "activation backward")?;
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| match mode {
            Activation::Relu => {
                if y > T::zero() {
                    g
                } else {
                    T::zero()
                }
            }
            Activation::Sigmoid => g * y * (T::one() - y),
        })
        .collect();
    Tensor::new(output.shape(), data)
}
