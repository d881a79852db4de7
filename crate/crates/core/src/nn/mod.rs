//! Layers with cached activations and exact backward passes.
//!
//! A layer run in [`Mode::Train`] remembers what its backward pass needs;
//! [`Layer::backward`] consumes that record, so calling it without a matching
//! training forward is a usage error.

mod conv;
mod norm;
mod unit;

pub use conv::Conv;
pub use norm::BatchNorm;
pub use unit::ConvUnit;

use rand_chacha::ChaCha8Rng;

use crate::audit::AuditRow;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Deterministic generator used for every initialization and shuffle.
pub type SeedRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for norms; activations recorded for backward.
    Train,
    /// Running statistics for norms; nothing recorded.
    Eval,
}

/// Read-only view of a learnable tensor and its accumulated gradient.
pub struct ParamRef<'a, T> {
    pub value: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    /// Whether decoupled weight decay applies.
    pub decay: bool,
}

pub struct ParamMut<'a, T> {
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
    pub decay: bool,
}

/// Channel, height, width of one feature map.
pub type FeatureShape = [usize; 3];

pub trait Layer<T: Scalar>: Send + Sync {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>));

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>));

    /// Non-learnable state that is still checkpointed (norm running statistics).
    fn visit_buffers<'a>(&'a self, _prefix: &str, _f: &mut dyn FnMut(String, &'a Tensor<T>)) {}

    fn visit_buffers_mut<'a>(&'a mut self, _prefix: &str, _f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {}

    /// Appends one row per primitive op and returns the output shape.
    fn audit(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape;

    fn param_count(&self) -> usize {
        let mut total = 0;
        self.visit_params("", &mut |_, p| total += p.value.len());
        total
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.grad.fill(T::zero()));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn missing_forward(what: &str) -> Error {
    Error::Usage(format!("{what}: backward called before a training-mode forward"))
}
