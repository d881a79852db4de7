use rand::Rng;

use super::{join, missing_forward, FeatureShape, Layer, Mode, ParamMut, ParamRef, SeedRng};
use crate::audit::AuditRow;
use crate::error::Result;
use crate::ops::{conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, ConvKind, ConvWeight};
use crate::tensor::{lit, Scalar, Tensor};

/// Bias-free convolution layer. Kernels wider than 1 use `k / 2` zero padding,
/// so stride-1 convolutions preserve spatial size.
pub struct Conv<T: Scalar = f32> {
    weight: ConvWeight<T>,
    grad: Tensor<T>,
    stride: usize,
    padding: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv<T> {
    /// Kaiming-uniform (fan-in) initialization: `U(−√(6/fan_in), √(6/fan_in))`.
    pub fn new(kind: ConvKind, c_in: usize, c_out: usize, k: usize, stride: usize, rng: &mut SeedRng) -> Result<Self> {
        let mut conv = Self::zeros(kind, c_in, c_out, k, stride)?;
        let fan_in = match kind {
            ConvKind::Depthwise => k * k,
            _ => c_in * k * k,
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        for v in conv.weight.tensor_mut().data_mut() {
            *v = lit(rng.random_range(-bound..bound));
        }
        Ok(conv)
    }

    pub fn zeros(kind: ConvKind, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Self> {
        let k = if kind == ConvKind::Pointwise { 1 } else { k };
        let c_out = if kind == ConvKind::Depthwise { c_in } else { c_out };
        let weight = ConvWeight::zeros(kind, c_out, c_in, k)?;
        let grad = Tensor::zeros(weight.tensor().shape());
        Ok(Self {
            weight,
            grad,
            stride,
            padding: k / 2,
            input: None,
        })
    }

    pub fn kind(&self) -> ConvKind {
        self.weight.kind()
    }

    pub fn weight(&self) -> &ConvWeight<T> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Tensor<T> {
        self.weight.tensor_mut()
    }

    pub fn c_out(&self) -> usize {
        self.weight.c_out()
    }

    fn run(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        match self.weight.kind() {
            ConvKind::Depthwise => depthwise_conv2d(input, &self.weight, self.stride, self.padding),
            _ => conv2d(input, &self.weight, self.stride, self.padding),
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let k = self.weight.k();
        (
            (h + 2 * self.padding - k) / self.stride + 1,
            (w + 2 * self.padding - k) / self.stride + 1,
        )
    }
}

impl<T: Scalar> Layer<T> for Conv<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = self.run(input)?;
        self.input = (mode == Mode::Train).then(|| input.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.take().ok_or_else(|| missing_forward("conv"))?;
        let (gi, gw) = match self.weight.kind() {
            ConvKind::Depthwise => depthwise_conv2d_backward(&input, &self.weight, self.stride, self.padding, grad_out)?,
            _ => conv2d_backward(&input, &self.weight, self.stride, self.padding, grad_out)?,
        };
        self.grad.add_assign(&gw)?;
        Ok(gi)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        f(
            join(prefix, "weight"),
            ParamRef {
                value: self.weight.tensor(),
                grad: &self.grad,
                decay: true,
            },
        );
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        f(
            join(prefix, "weight"),
            ParamMut {
                value: self.weight.tensor_mut(),
                grad: &mut self.grad,
                decay: true,
            },
        );
    }

    fn audit(&self, prefix: &str, [_, h, w]: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let (ho, wo) = self.out_hw(h, w);
        let params = self.weight.param_count();
        rows.push(AuditRow {
            name: prefix.to_string(),
            kind: self.weight.kind().name(),
            params,
            macs: (params * ho * wo) as u64,
            other_ops: 0,
            out_shape: [self.c_out(), ho, wo],
        });
        [self.c_out(), ho, wo]
    }
}
