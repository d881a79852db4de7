use crate::error::Result;
use crate::tensor::{lit, Scalar, Tensor};

pub const PROB_CLAMP: f64 = 1e-7;

/// Class-balanced binary cross-entropy over pixels whose target is exactly 0
/// or 1; any other target value is ignored.
///
/// `loss = −(1/N)·Σ [β·y·log p + (1−β)·(1−y)·log(1−p)]` with `β = #neg/#valid`
/// and `p` clamped to `[1e-7, 1 − 1e-7]`. The gradient is evaluated at the
/// clamped probability. With no valid pixel the loss and gradient are zero.
pub fn balanced_bce<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    pred.same_shape(target, "balanced_bce target")?;
    let (mut pos, mut neg) = (0usize, 0usize);
    for &y in target.data() {
        if y == T::one() {
            pos += 1;
        } else if y == T::zero() {
            neg += 1;
        }
    }
    let valid = pos + neg;
    let mut grad = Tensor::zeros(pred.shape());
    if valid == 0 {
        return Ok((T::zero(), grad));
    }
    let beta = neg as f64 / valid as f64;
    let n = valid as f64;
    let mut total = 0.0f64;
    for ((g, &p), &y) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        let p = p.to_f64_lossy().clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if y == T::one() {
            total -= beta * p.ln();
            *g = lit(-beta / (n * p));
        } else if y == T::zero() {
            total -= (1.0 - beta) * (1.0 - p).ln();
            *g = lit((1.0 - beta) / (n * (1.0 - p)));
        }
    }
    Ok((lit(total / n), grad))
}

/// Fraction of negatives among valid pixels, `None` when every pixel is ignored.
pub fn class_balance<T: Scalar>(target: &Tensor<T>) -> Option<f64> {
    let pos = target.data().iter().filter(|&&y| y == T::one()).count();
    let neg = target.data().iter().filter(|&&y| y == T::zero()).count();
    (pos + neg > 0).then(|| neg as f64 / (pos + neg) as f64)
}
