//! Per-channel batch normalization over `(n, h, w)`.

use crate::error::{Error, Result};
use crate::tensor::{lit, Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

/// Learnable affine pair plus running statistics, one entry per channel.
/// Every field has shape `(1, c, 1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormState<T = f32> {
    pub scale: Tensor<T>,
    pub shift: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Scalar> NormState<T> {
    pub fn new(channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            scale: Tensor::full(shape, T::one()),
            shift: Tensor::zeros(shape),
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::full(shape, T::one()),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Saved by the training-mode forward for the backward pass.
#[derive(Clone, Debug)]
pub struct NormCache<T> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

fn check<T: Scalar>(input: &Tensor<T>, state: &NormState<T>) -> Result<()> {
    if input.c() != state.channels() {
        return Err(Error::shape(format!(
            "batch_norm: input has {} channels, state has {}",
            input.c(),
            state.channels()
        )));
    }
    Ok(())
}

/// Normalizes with batch statistics and folds them into the running estimates
/// (`running ← (1 − momentum)·running + momentum·batch`, unbiased variance).
pub fn batch_norm_train<T: Scalar>(
    input: &Tensor<T>,
    state: &mut NormState<T>,
    momentum: T,
    eps: T,
) -> Result<(Tensor<T>, NormCache<T>)> {
    check(input, state)?;
    let [n, c, h, w] = input.shape();
    let count = n * h * w;
    if count == 0 {
        return Err(Error::shape("batch_norm over an empty batch"));
    }
    let inv_count: T = lit(1.0 / count as f64);
    let mut out = Tensor::zeros(input.shape());
    let mut normalized = Tensor::zeros(input.shape());
    let mut inv_std = vec![T::zero(); c];
    for ch in 0..c {
        let mut mean = T::zero();
        for b in 0..n {
            mean += input.plane(b, ch).iter().copied().sum::<T>();
        }
        mean *= inv_count;
        let mut var = T::zero();
        for b in 0..n {
            for &v in input.plane(b, ch) {
                let d = v - mean;
                var += d * d;
            }
        }
        var *= inv_count;
        let istd = T::one() / (var + eps).sqrt();
        inv_std[ch] = istd;
        let (g, s) = (state.scale.data()[ch], state.shift.data()[ch]);
        for b in 0..n {
            let src = input.plane(b, ch);
            let xh = normalized.plane_mut(b, ch);
            let dst = out.plane_mut(b, ch);
            for ((d, x), &v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                *x = (v - mean) * istd;
                *d = g * *x + s;
            }
        }
        let unbiased = if count > 1 {
            var * lit(count as f64 / (count - 1) as f64)
        } else {
            var
        };
        let rm = &mut state.running_mean.data_mut()[ch];
        *rm = (T::one() - momentum) * *rm + momentum * mean;
        let rv = &mut state.running_var.data_mut()[ch];
        *rv = (T::one() - momentum) * *rv + momentum * unbiased;
    }
    Ok((out, NormCache { normalized, inv_std }))
}

/// Normalizes with the running statistics.
pub fn batch_norm_eval<T: Scalar>(input: &Tensor<T>, state: &NormState<T>, eps: T) -> Result<Tensor<T>> {
    check(input, state)?;
    let mut out = Tensor::zeros(input.shape());
    for ch in 0..input.c() {
        let istd = T::one() / (state.running_var.data()[ch] + eps).sqrt();
        let a = state.scale.data()[ch] * istd;
        let bias = state.shift.data()[ch] - a * state.running_mean.data()[ch];
        for b in 0..input.n() {
            for (d, &v) in out.plane_mut(b, ch).iter_mut().zip(input.plane(b, ch)) {
                *d = a * v + bias;
            }
        }
    }
    Ok(out)
}

/// Gradients `(grad_input, grad_scale, grad_shift)` of the training-mode forward.
pub fn batch_norm_train_backward<T: Scalar>(
    cache: &NormCache<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    cache.normalized.same_shape(grad_out, "batch_norm backward")?;
    let [n, c, h, w] = grad_out.shape();
    let count: T = lit((n * h * w) as f64);
    let mut grad_in = Tensor::zeros(grad_out.shape());
    let mut g_scale = vec![T::zero(); c];
    let mut g_shift = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sum_g, mut sum_gx) = (T::zero(), T::zero());
        for b in 0..n {
            for (&g, &xh) in grad_out.plane(b, ch).iter().zip(cache.normalized.plane(b, ch)) {
                sum_g += g;
                sum_gx += g * xh;
            }
        }
        g_scale[ch] = sum_gx;
        g_shift[ch] = sum_g;
        let k = scale.data()[ch] * cache.inv_std[ch] / count;
        for b in 0..n {
            let go = grad_out.plane(b, ch);
            let xh = cache.normalized.plane(b, ch);
            for ((d, &g), &x) in grad_in.plane_mut(b, ch).iter_mut().zip(go).zip(xh) {
                *d = k * (count * g - sum_g - x * sum_gx);
            }
        }
    }
    Ok((grad_in, g_scale, g_shift))
}

/// Gradients of the inference-mode forward, where statistics are constants.
pub fn batch_norm_eval_backward<T: Scalar>(
    input: &Tensor<T>,
    state: &NormState<T>,
    eps: T,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    check(input, state)?;
    input.same_shape(grad_out, "batch_norm backward")?;
    let c = input.c();
    let mut grad_in = Tensor::zeros(input.shape());
    let mut g_scale = vec![T::zero(); c];
    let mut g_shift = vec![T::zero(); c];
    for ch in 0..c {
        let istd = T::one() / (state.running_var.data()[ch] + eps).sqrt();
        let mean = state.running_mean.data()[ch];
        let gamma = state.scale.data()[ch];
        for b in 0..input.n() {
            let go = grad_out.plane(b, ch);
            let x = input.plane(b, ch);
            for ((d, &g), &v) in grad_in.plane_mut(b, ch).iter_mut().zip(go).zip(x) {
                *d = g * gamma * istd;
                g_scale[ch] += g * (v - mean) * istd;
                g_shift[ch] += g;
            }
        }
    }
    Ok((grad_in, g_scale, g_shift))
}
