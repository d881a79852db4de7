use super::{join, missing_forward, FeatureShape, Layer, Mode, ParamMut, ParamRef};
use crate::audit::AuditRow;
use crate::error::Result;
use crate::ops::{
    batch_norm_eval, batch_norm_train, batch_norm_train_backward, NormCache, NormState, DEFAULT_EPS,
    DEFAULT_MOMENTUM,
};
use crate::tensor::{lit, Scalar, Tensor};

pub struct BatchNorm<T: Scalar = f32> {
    state: NormState<T>,
    grad_scale: Tensor<T>,
    grad_shift: Tensor<T>,
    momentum: T,
    eps: T,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            state: NormState::new(channels),
            grad_scale: Tensor::zeros([1, channels, 1, 1]),
            grad_shift: Tensor::zeros([1, channels, 1, 1]),
            momentum: lit(DEFAULT_MOMENTUM),
            eps: lit(DEFAULT_EPS),
            cache: None,
        }
    }

    pub fn state(&self) -> &NormState<T> {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut NormState<T> {
        &mut self.state
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => {
                let (out, cache) = batch_norm_train(input, &mut self.state, self.momentum, self.eps)?;
                self.cache = Some(cache);
                Ok(out)
            }
            Mode::Eval => {
                self.cache = None;
                batch_norm_eval(input, &self.state, self.eps)
            }
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_forward("batch_norm"))?;
        let (gi, gs, gb) = batch_norm_train_backward(&cache, &self.state.scale, grad_out)?;
        for (d, v) in self.grad_scale.data_mut().iter_mut().zip(gs) {
            *d += v;
        }
        for (d, v) in self.grad_shift.data_mut().iter_mut().zip(gb) {
            *d += v;
        }
        Ok(gi)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        f(
            join(prefix, "scale"),
            ParamRef {
                value: &self.state.scale,
                grad: &self.grad_scale,
                decay: false,
            },
        );
        f(
            join(prefix, "shift"),
            ParamRef {
                value: &self.state.shift,
                grad: &self.grad_shift,
                decay: false,
            },
        );
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        f(
            join(prefix, "scale"),
            ParamMut {
                value: &mut self.state.scale,
                grad: &mut self.grad_scale,
                decay: false,
            },
        );
        f(
            join(prefix, "shift"),
            ParamMut {
                value: &mut self.state.shift,
                grad: &mut self.grad_shift,
                decay: false,
            },
        );
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "running_mean"), &self.state.running_mean);
        f(join(prefix, "running_var"), &self.state.running_var);
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "running_mean"), &mut self.state.running_mean);
        f(join(prefix, "running_var"), &mut self.state.running_var);
    }

    fn audit(&self, prefix: &str, shape: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let [c, h, w] = shape;
        rows.push(AuditRow {
            name: prefix.to_string(),
            kind: "norm",
            params: 2 * c,
            macs: 0,
            other_ops: (2 * c * h * w) as u64,
            out_shape: shape,
        });
        shape
    }
}
