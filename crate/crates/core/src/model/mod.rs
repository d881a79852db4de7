//! The three-stage edge detector: backbone stages of residual blocks joined
//! by PoolBlocks, a top-down FBlock decoder and a sigmoid edge head.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{ModelConfig, Transition, PRESETS};

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;

use crate::audit::AuditRow;
use crate::blocks::{default_registry, BlockRegistry, BlockSpec, FBlock, PoolBlock, ResidualBlock};
use crate::error::{Error, Result};
use crate::nn::{join, missing_forward, Conv, FeatureShape, Layer, Mode, ParamMut, ParamRef, SeedRng};
use crate::ops::{activation, sigmoid_scalar, Activation, ConvKind};
use crate::tensor::{Scalar, Tensor};

struct Stage<T: Scalar> {
    transition: Option<PoolBlock<T>>,
    blocks: Vec<ResidualBlock<T>>,
}

impl<T: Scalar> Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut x = match &mut self.transition {
            Some(t) => t.forward(x, mode)?,
            None => x.clone(),
        };
        for b in &mut self.blocks {
            x = b.forward(&x, mode)?;
        }
        Ok(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(&g)?;
        }
        match &mut self.transition {
            Some(t) => t.backward(&g),
            None => Ok(g),
        }
    }
}

struct ForwardRecord<T> {
    prob: Tensor<T>,
    input_hw: (usize, usize),
}

pub struct Model<T: Scalar = f32> {
    config: ModelConfig,
    stages: Vec<Stage<T>>,
    /// `decoders[i]` lifts stage `i + 2` onto stage `i + 1`.
    decoders: Vec<FBlock<T>>,
    /// Optional per-stage units applied to the shallow operand of each add.
    skips: Vec<FBlock<T>>,
    head: Conv<T>,
    record: Option<ForwardRecord<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        Self::build_with(config, default_registry(), seed)
    }

    pub fn build_with(config: &ModelConfig, registry: &BlockRegistry, seed: u64) -> Result<Self> {
        config.validate(registry)?;
        let mut rng = SeedRng::seed_from_u64(seed);
        let ch = config.stage_channels;
        let norm = config.norm_enabled;
        let mut stages = Vec::with_capacity(3);
        for s in 0..3 {
            let c = ch[s];
            let mut blocks = Vec::with_capacity(config.blocks_per_stage);
            let mut transition = None;
            for i in 0..config.blocks_per_stage {
                let spec = if s == 0 && i == 0 {
                    // stem: 3 input channels, no skip
                    BlockSpec::new(registry, &config.block, 3, c, c, false)?
                } else if s > 0 && i == 0 && config.transition == Transition::Shortcut1x1 {
                    BlockSpec::new(registry, &config.block, ch[s - 1], c, c, true)?.with_projection(2)
                } else {
                    BlockSpec::new(registry, &config.block, c, c, c, true)?
                };
                blocks.push(ResidualBlock::build(&spec, norm, registry, &mut rng)?);
            }
            if s > 0 && config.transition == Transition::PoolBlock {
                transition = Some(PoolBlock::new(ch[s - 1], c)?);
            }
            stages.push(Stage { transition, blocks });
        }
        let decoders = vec![
            FBlock::new(ch[1], ch[0], 2, norm, &mut rng)?,
            FBlock::new(ch[2], ch[1], 2, norm, &mut rng)?,
        ];
        let skips = if config.fblock_on_skip {
            vec![
                FBlock::new(ch[0], ch[0], 1, norm, &mut rng)?,
                FBlock::new(ch[1], ch[1], 1, norm, &mut rng)?,
            ]
        } else {
            Vec::new()
        };
        let head = Conv::new(ConvKind::Pointwise, ch[0], 1, 1, 1, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            stages,
            decoders,
            skips,
            head,
            record: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn head_mut(&mut self) -> &mut Conv<T> {
        &mut self.head
    }

    /// Residual blocks of all stages in execution order.
    pub fn blocks(&self) -> impl Iterator<Item = &ResidualBlock<T>> {
        self.stages.iter().flat_map(|s| s.blocks.iter())
    }

    pub fn decoders(&self) -> &[FBlock<T>] {
        &self.decoders
    }

    /// Learnable tensors by stable, unique name.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit_params("", &mut |name, p| out.push((name, p.value)));
        out
    }

    /// Learnable tensors followed by norm running statistics.
    pub fn named_state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = self.named_parameters();
        self.visit_buffers("", &mut |name, t| out.push((name, t)));
        out
    }

    /// Forward at inference time, returning edge probabilities `n×1×h×w`.
    pub fn predict(&mut self, image: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(image, Mode::Eval)
    }

    fn padded_hw(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(4).max(1) * 4, w.div_ceil(4).max(1) * 4)
    }
}

impl<T: Scalar> Layer<T> for Model<T> {
    /// Inputs whose sides are not multiples of 4 are zero-padded on the
    /// bottom/right and the output is cropped back.
    fn forward(&mut self, image: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if image.c() != 3 {
            return Err(Error::shape(format!(
                "model expects 3-channel images, got {}",
                image.c()
            )));
        }
        let (h, w) = (image.h(), image.w());
        if h == 0 || w == 0 || image.n() == 0 {
            return Err(Error::shape("empty image"));
        }
        let (hp, wp) = Self::padded_hw(h, w);
        let x = if (hp, wp) != (h, w) {
            image.pad_to(hp, wp)?
        } else {
            image.clone()
        };

        let s1 = self.stages[0].forward(&x, mode)?;
        let s2 = self.stages[1].forward(&s1, mode)?;
        let s3 = self.stages[2].forward(&s2, mode)?;

        let mut d2 = self.decoders[1].forward(&s3, mode)?;
        match self.skips.get_mut(1) {
            Some(skip) => d2.add_assign(&skip.forward(&s2, mode)?)?,
            None => d2.add_assign(&s2)?,
        }
        let mut d1 = self.decoders[0].forward(&d2, mode)?;
        match self.skips.get_mut(0) {
            Some(skip) => d1.add_assign(&skip.forward(&s1, mode)?)?,
            None => d1.add_assign(&s1)?,
        }
        let logits = self.head.forward(&d1, mode)?;
        let prob = activation(&logits, Activation::Sigmoid);
        self.record = (mode == Mode::Train).then(|| ForwardRecord {
            prob: prob.clone(),
            input_hw: (h, w),
        });
        if (hp, wp) != (h, w) {
            prob.crop_to(h, w)
        } else {
            Ok(prob)
        }
    }

    /// Takes the gradient with respect to the cropped probabilities.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let rec = self.record.take().ok_or_else(|| missing_forward("model"))?;
        let (h, w) = rec.input_hw;
        if grad_out.shape() != [rec.prob.n(), 1, h, w] {
            return Err(Error::shape(format!(
                "model backward: grad {:?}, output was {:?}",
                grad_out.shape(),
                [rec.prob.n(), 1, h, w]
            )));
        }
        let g = grad_out.pad_to(rec.prob.h(), rec.prob.w())?;
        let g_logits = Tensor::new(
            g.shape(),
            g.data()
                .iter()
                .zip(rec.prob.data())
                .map(|(&g, &p)| g * p * (T::one() - p))
                .collect(),
        )?;
        let g_d1 = self.head.backward(&g_logits)?;
        let mut g_s1 = match self.skips.get_mut(0) {
            Some(skip) => skip.backward(&g_d1)?,
            None => g_d1.clone(),
        };
        let g_d2 = self.decoders[0].backward(&g_d1)?;
        let mut g_s2 = match self.skips.get_mut(1) {
            Some(skip) => skip.backward(&g_d2)?,
            None => g_d2.clone(),
        };
        let g_s3 = self.decoders[1].backward(&g_d2)?;

        g_s2.add_assign(&self.stages[2].backward(&g_s3)?)?;
        g_s1.add_assign(&self.stages[1].backward(&g_s2)?)?;
        let gx = self.stages[0].backward(&g_s1)?;
        gx.crop_to(h, w)
    }

    fn visit_params<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, ParamRef<'a, T>)) {
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, b) in stage.blocks.iter().enumerate() {
                b.visit_params(&join(prefix, &format!("stage{}.block{i}", s + 1)), f);
            }
        }
        for (i, d) in self.decoders.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("decoder{}", i + 1)), f);
        }
        for (i, d) in self.skips.iter().enumerate() {
            d.visit_params(&join(prefix, &format!("skip{}", i + 1)), f);
        }
        self.head.visit_params(&join(prefix, "head"), f);
    }

    fn visit_params_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, ParamMut<'a, T>)) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (i, b) in stage.blocks.iter_mut().enumerate() {
                b.visit_params_mut(&join(prefix, &format!("stage{}.block{i}", s + 1)), f);
            }
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.visit_params_mut(&join(prefix, &format!("decoder{}", i + 1)), f);
        }
        for (i, d) in self.skips.iter_mut().enumerate() {
            d.visit_params_mut(&join(prefix, &format!("skip{}", i + 1)), f);
        }
        self.head.visit_params_mut(&join(prefix, "head"), f);
    }

    fn visit_buffers<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        for (s, stage) in self.stages.iter().enumerate() {
            for (i, b) in stage.blocks.iter().enumerate() {
                b.visit_buffers(&join(prefix, &format!("stage{}.block{i}", s + 1)), f);
            }
        }
        for (i, d) in self.decoders.iter().enumerate() {
            d.visit_buffers(&join(prefix, &format!("decoder{}", i + 1)), f);
        }
        for (i, d) in self.skips.iter().enumerate() {
            d.visit_buffers(&join(prefix, &format!("skip{}", i + 1)), f);
        }
    }

    fn visit_buffers_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        for (s, stage) in self.stages.iter_mut().enumerate() {
            for (i, b) in stage.blocks.iter_mut().enumerate() {
                b.visit_buffers_mut(&join(prefix, &format!("stage{}.block{i}", s + 1)), f);
            }
        }
        for (i, d) in self.decoders.iter_mut().enumerate() {
            d.visit_buffers_mut(&join(prefix, &format!("decoder{}", i + 1)), f);
        }
        for (i, d) in self.skips.iter_mut().enumerate() {
            d.visit_buffers_mut(&join(prefix, &format!("skip{}", i + 1)), f);
        }
    }

    fn audit(&self, prefix: &str, input: FeatureShape, rows: &mut Vec<AuditRow>) -> FeatureShape {
        let [_, h, w] = input;
        let (hp, wp) = Self::padded_hw(h, w);
        let mut shape = [input[0], hp, wp];
        let mut stage_out = Vec::with_capacity(3);
        for (s, stage) in self.stages.iter().enumerate() {
            let name = join(prefix, &format!("stage{}", s + 1));
            if let Some(t) = &stage.transition {
                shape = t.audit(&join(&name, "poolblock"), shape, rows);
            }
            for (i, b) in stage.blocks.iter().enumerate() {
                shape = b.audit(&join(&name, &format!("block{i}")), shape, rows);
            }
            stage_out.push(shape);
        }
        let mut d = stage_out[2];
        for i in (0..2).rev() {
            let name = join(prefix, &format!("decoder{}", i + 1));
            d = self.decoders[i].audit(&name, d, rows);
            if let Some(skip) = self.skips.get(i) {
                skip.audit(&join(prefix, &format!("skip{}", i + 1)), stage_out[i], rows);
            }
            rows.push(AuditRow::elementwise(join(&name, "add"), "add", d));
        }
        let out = self.head.audit(&join(prefix, "head"), d, rows);
        rows.push(AuditRow::elementwise(join(prefix, "head.sigmoid"), "sigmoid", out));
        [1, h, w]
    }
}

impl<T: Scalar> Model<T> {
    /// Snapshot of every learnable tensor and running statistic as `f32`.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let entries = self
            .named_state()
            .into_iter()
            .map(|(name, t)| CheckpointEntry {
                name,
                dims: t.shape().iter().map(|&d| d as u32).collect(),
                data: t.data().iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect(),
            })
            .collect();
        Checkpoint { entries }
    }

    /// Copies a checkpoint into this model. Every model tensor must be present
    /// with the same shape, and every checkpoint entry must name a model tensor.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        let mut by_name: BTreeMap<&str, &CheckpointEntry> = BTreeMap::new();
        for e in &ck.entries {
            if by_name.insert(e.name.as_str(), e).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry '{}'", e.name)));
            }
        }
        let mut expected: Vec<(String, [usize; 4])> = Vec::new();
        self.visit_params("", &mut |n, p| expected.push((n, p.value.shape())));
        self.visit_buffers("", &mut |n, t| expected.push((n, t.shape())));
        for e in &ck.entries {
            if !expected.iter().any(|(n, _)| *n == e.name) {
                return Err(Error::Checkpoint(format!(
                    "unknown parameter '{}' for this model configuration",
                    e.name
                )));
            }
        }
        for (name, shape) in &expected {
            let e = by_name
                .get(name.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter '{name}'")))?;
            let dims: Vec<usize> = e.dims.iter().map(|&d| d as usize).collect();
            if dims != shape {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for '{name}': checkpoint {:?}, model {:?}",
                    dims, shape
                )));
            }
            if let Some(i) = e.data.iter().position(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("non-finite value at index {i} of '{name}'")));
            }
        }
        let copy = |name: String, dst: &mut Tensor<T>| {
            let e = by_name[name.as_str()];
            for (d, &v) in dst.data_mut().iter_mut().zip(&e.data) {
                *d = T::from_f32(v).unwrap_or_else(T::nan);
            }
        };
        self.visit_params_mut("", &mut |n, p| copy(n, p.value));
        self.visit_buffers_mut("", &mut |n, t| copy(n, t));
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().write(path)
    }

    /// Builds a model for `config` and fills it from the checkpoint at `path`.
    pub fn load(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        let ck = Checkpoint::read(path)?;
        let mut model = Self::build(config, 0)?;
        model.load_checkpoint(&ck)?;
        Ok(model)
    }
}

/// Probability of one logit, exposed for tests of the head.
pub fn edge_probability<T: Scalar>(logit: T) -> T {
    sigmoid_scalar(logit)
}
