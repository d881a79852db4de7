use super::FusionMode;
use crate::audit::AuditRow;
use crate::error::{Error, Result};
use crate::nn::{
    join, missing_forward, ConvUnit, FeatureShape, Layer, Mode, ParamMut, ParamRef, SeedRng,
};
use crate::ops::{pool2d, pool2d_backward, upsample_bilinear, upsample_bilinear_backward, ConvKind, PoolMode};
use crate::tensor::{Scalar, Tensor};

/// Parameter-free stage transition: 2×2/s2 max pool and avg pool of the same
/// input, fused by addition or channel concatenation.
pub struct PoolBlock<T: Scalar = f32> {
    fusion: FusionMode,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> PoolBlock<T> {
    /// Addition when the channel count stays, concatenation when it doubles.
    pub fn new(c_prev: usize, c_next: usize) -> Result<Self> {
        let fusion = if c_next == c_prev {
            FusionMode::Add
        } else if c_next == 2 * c_prev {
            FusionMode::Concat
        } else {
            return Err(Error::config(format!(
                "PoolBlock joins {c_prev} to {c_next} channels; only equal or doubled counts fuse"
            )));
        };
        if c_prev == 0 {
            return Err(Error::config("PoolBlock with zero channels"));
        }
        Ok(Self { fusion, input: None })
    }

    pub fn fusion(&self) -> FusionMode {
        self.fusion
    }
}

impl<T: Scalar> Layer<T> for PoolBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let max = pool2d(input, PoolMode::Max, 2, 2)?;
        let avg = pool2d(input, PoolMode::Avg, 2, 2)?;
        self.input = (mode == Mode::Train).then(|| input.clone());
        match self.fusion {
            FusionMode::Add => max.add(&avg),
            FusionMode::Concat => Tensor::concat_channels(&max, &avg),
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self.input.take().ok_or_else(|| missing_forward("pool block"))?;
        let (g_max, g_avg) = match self.fusion {
            FusionMode::Add => (grad_out.clone(), grad_out.clone()),
            FusionMode::Concat => grad_out.split_channels(input.c())?,
        };
        let mut gi = pool2d_backward(&input, PoolMode::Max, 2, 2, &g_max)?;
        gi.add_assign(&pool2d_backward(&input, PoolMode::Avg, 2, 2, &g_avg)?)?;
        Ok(gi)
    }

    fn visit_params<'a>(&'a self, _prefix: &str, _f: &mut dyn FnMut(String, ParamRef<'a, T>)) {}

    fn visit_params_mut<'a>(&'a mut self, _prefix: &str, _f: &mut dyn FnMut(String, ParamMut<'a, T>)) {}

    fn audit(&self, prefix: &str, [c, h, w]: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let pooled = [c, h / 2, w / 2];
        for kind in ["maxpool", "avgpool"] {
            rows.push(AuditRow {
                name: join(prefix, kind),
                kind: "pool",
                params: 0,
                macs: 0,
                other_ops: (4 * c * (h / 2) * (w / 2)) as u64,
                out_shape: pooled,
            });
        }
        let out = match self.fusion {
            FusionMode::Add => pooled,
            FusionMode::Concat => [2 * c, h / 2, w / 2],
        };
        rows.push(AuditRow::elementwise(
            join(prefix, self.fusion.name()),
            self.fusion.name(),
            out,
        ));
        out
    }
}

/// Decoder unit: bilinear upsampling then `pointwise → norm → relu` so a deep
/// feature map lines up with the previous stage in both size and channels.
/// With `factor = 1` it is the same unit without the resize.
pub struct FBlock<T: Scalar = f32> {
    factor: usize,
    unit: ConvUnit<T>,
    in_shape: Option<[usize; 4]>,
}

impl<T: Scalar> FBlock<T> {
    pub fn new(c_next: usize, c_prev: usize, factor: usize, norm: bool, rng: &mut SeedRng) -> Result<Self> {
        if c_next == 0 || c_prev == 0 || factor == 0 {
            return Err(Error::config("FBlock needs positive channels and factor"));
        }
        Ok(Self {
            factor,
            unit: ConvUnit::new(ConvKind::Pointwise, c_next, c_prev, 1, 1, norm, true, rng)?,
            in_shape: None,
        })
    }

    pub fn unit(&self) -> &ConvUnit<T> {
        &self.unit
    }

    pub fn unit_mut(&mut self) -> &mut ConvUnit<T> {
        &mut self.unit
    }
}

impl<T: Scalar> Layer<T> for FBlock<T> {
    fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let up = upsample_bilinear(input, self.factor)?;
        self.in_shape = (mode == Mode::Train).then(|| input.shape());
        self.unit.forward(&up, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = self.in_shape.take().ok_or_else(|| missing_forward("fblock"))?;
        let g = self.unit.backward(grad_out)?;
        upsample_bilinear_backward(shape, self.factor, &g)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        self.unit.visit_params(prefix, f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        self.unit.visit_params_mut(prefix, f);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.unit.visit_buffers(prefix, f);
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.unit.visit_buffers_mut(prefix, f);
    }

    fn audit(&self, prefix: &str, [c, h, w]: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let up = [c, h * self.factor, w * self.factor];
        if self.factor > 1 {
            rows.push(AuditRow {
                name: join(prefix, "upsample"),
                kind: "upsample",
                params: 0,
                macs: 0,
                other_ops: (4 * up[0] * up[1] * up[2]) as u64,
                out_shape: up,
            });
        }
        self.unit.audit(prefix, up, rows)
    }
}
