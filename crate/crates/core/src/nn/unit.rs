use super::{join, missing_forward, BatchNorm, Conv, FeatureShape, Layer, Mode, ParamMut, ParamRef, SeedRng};
use crate::audit::AuditRow;
use crate::error::Result;
use crate::ops::{activation, activation_backward, Activation, ConvKind};
use crate::tensor::{Scalar, Tensor};

/// `conv → [norm] → [relu]`, the repeated unit of every block.
pub struct ConvUnit<T: Scalar = f32> {
    pub conv: Conv<T>,
    pub norm: Option<BatchNorm<T>>,
    relu: bool,
    relu_out: Option<Tensor<T>>,
}

impl<T: Scalar> ConvUnit<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: ConvKind,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        norm: bool,
        relu: bool,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        let conv = Conv::new(kind, c_in, c_out, k, stride, rng)?;
        let c = conv.c_out();
        Ok(Self {
            conv,
            norm: norm.then(|| BatchNorm::new(c)),
            relu,
            relu_out: None,
        })
    }

    pub fn c_out(&self) -> usize {
        self.conv.c_out()
    }

    pub fn has_relu(&self) -> bool {
        self.relu
    }
}

impl<T: Scalar> Layer<T> for ConvUnit<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = self.conv.forward(input, mode)?;
        if let Some(norm) = &mut self.norm {
            x = norm.forward(&x, mode)?;
        }
        if self.relu {
            x = activation(&x, Activation::Relu);
            self.relu_out = (mode == Mode::Train).then(|| x.clone());
        }
        Ok(x)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = if self.relu {
            let out = self.relu_out.take().ok_or_else(|| missing_forward("relu"))?;
            activation_backward(&out, Activation::Relu, grad_out)?
        } else {
            grad_out.clone()
        };
        if let Some(norm) = &mut self.norm {
            g = norm.backward(&g)?;
        }
        self.conv.backward(&g)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        self.conv.visit_params(&join(prefix, "conv"), f);
        if let Some(norm) = &self.norm {
            norm.visit_params(&join(prefix, "norm"), f);
        }
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        self.conv.visit_params_mut(&join(prefix, "conv"), f);
        if let Some(norm) = &mut self.norm {
            norm.visit_params_mut(&join(prefix, "norm"), f);
        }
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        if let Some(norm) = &self.norm {
            norm.visit_buffers(&join(prefix, "norm"), f);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        if let Some(norm) = &mut self.norm {
            norm.visit_buffers_mut(&join(prefix, "norm"), f);
        }
    }

    fn audit(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let shape = self.conv.audit(&join(prefix, "conv"), input, rows);
        if let Some(norm) = &self.norm {
            norm.audit(&join(prefix, "norm"), shape, rows);
        }
        if self.relu {
            rows.push(AuditRow::elementwise(join(prefix, "relu"), "relu", shape));
        }
        shape
    }
}
