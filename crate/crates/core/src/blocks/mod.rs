//! Building blocks: the residual variants (rb1, rb2, lb, pddp, lb5x5), the
//! PoolBlock stage transition and the FBlock decoder unit.

mod registry;
mod residual;
mod transition;

pub use registry::{default_registry, BlockRegistry, BlockVariant, Lb, Lb5x5, Pddp, Rb1, Rb2, SpatialConv};
pub use residual::ResidualBlock;
pub use transition::{FBlock, PoolBlock};

use crate::error::{Error, Result};
use crate::nn::SeedRng;
use crate::tensor::Scalar;

/// How a PoolBlock merges its max-pooled and avg-pooled maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    Add,
    Concat,
}

impl FusionMode {
    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        }
    }

    /// Output channels, or an error when addition would mix channel counts.
    pub fn output_channels(self, c1: usize, c2: usize) -> Result<usize> {
        match self {
            FusionMode::Add if c1 == c2 => Ok(c1),
            FusionMode::Add => Err(Error::config(format!("cannot add {c1} and {c2} channels"))),
            FusionMode::Concat => Ok(c1 + c2),
        }
    }
}

/// Declarative description of one residual block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    /// Registered variant name.
    pub kind: String,
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    /// Standard spatial convs.
    pub ns: usize,
    /// Depthwise spatial convs.
    pub nd: usize,
    pub residual: bool,
    /// Stride of the leading pointwise conv (and of the projection shortcut).
    pub stride: usize,
    /// Replace the identity skip with a strided 1×1 projection.
    pub projection: bool,
}

impl BlockSpec {
    /// Spec for a registered variant with `ns`/`nd` filled from the registry.
    pub fn new(
        registry: &BlockRegistry,
        kind: &str,
        c_in: usize,
        c_mid: usize,
        c_out: usize,
        residual: bool,
    ) -> Result<Self> {
        let variant = registry.require(kind)?;
        Ok(Self {
            kind: kind.to_string(),
            c_in,
            c_mid,
            c_out,
            ns: variant.standard_count(),
            nd: variant.depthwise_count(),
            residual,
            stride: 1,
            projection: false,
        })
    }

    /// Shorthand using the default registry.
    pub fn of(kind: &str, c_in: usize, c_mid: usize, c_out: usize, residual: bool) -> Result<Self> {
        Self::new(default_registry(), kind, c_in, c_mid, c_out, residual)
    }

    pub fn with_projection(mut self, stride: usize) -> Self {
        self.projection = true;
        self.residual = true;
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.c_in == 0 || self.c_mid == 0 || self.c_out == 0 {
            return Err(Error::config(format!("block '{}' has a zero channel count", self.kind)));
        }
        if self.stride == 0 {
            return Err(Error::config("block stride must be at least 1"));
        }
        if self.residual && !self.projection && (self.c_in != self.c_out || self.stride != 1) {
            return Err(Error::config(format!(
                "identity residual needs matching shapes, got {} -> {} channels at stride {}",
                self.c_in, self.c_out, self.stride
            )));
        }
        Ok(())
    }
}

pub fn build_block<T: Scalar>(spec: &BlockSpec, norm_enabled: bool, rng: &mut SeedRng) -> Result<ResidualBlock<T>> {
    ResidualBlock::build(spec, norm_enabled, default_registry(), rng)
}

/// Parameter count of a block; `include_norm = false` counts conv weights only.
pub fn block_param_count<T: Scalar>(block: &ResidualBlock<T>, include_norm: bool) -> usize {
    block.param_count_with(include_norm)
}

pub fn build_poolblock<T: Scalar>(c_prev: usize, c_next: usize) -> Result<PoolBlock<T>> {
    PoolBlock::new(c_prev, c_next)
}

pub fn build_fblock<T: Scalar>(c_next: usize, c_prev: usize, norm_enabled: bool, rng: &mut SeedRng) -> Result<FBlock<T>> {
    FBlock::new(c_next, c_prev, 2, norm_enabled, rng)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::nn::{Layer, Mode};
    use crate::ops::pool2d;
    use crate::tensor::Tensor;

    fn rng() -> SeedRng {
        SeedRng::seed_from_u64(3)
    }

    fn count(kind: &str, c_in: usize, c_mid: usize, c_out: usize) -> usize {
        let spec = BlockSpec::of(kind, c_in, c_mid, c_out, false).unwrap();
        let block = build_block::<f32>(&spec, true, &mut rng()).unwrap();
        block_param_count(&block, false)
    }

    #[test]
    fn three_structure_counts() {
        assert_eq!(count("rb1", 32, 32, 64), 12288);
        assert_eq!(count("lb", 32, 32, 64), 3360);
        assert_eq!(count("pddp", 32, 32, 64), 3648);
    }

    #[test]
    fn ablation_row_counts() {
        assert_eq!(count("rb1", 32, 32, 32), 11264);
        assert_eq!(count("rb2", 32, 32, 32), 20480);
        assert_eq!(count("lb", 32, 32, 32), 2336);
        assert_eq!(count("pddp", 32, 32, 32), 2624);
        assert_eq!(count("lb5x5", 32, 32, 32), 2848);
    }

    #[test]
    fn norm_adds_two_per_channel_per_unit() {
        let spec = BlockSpec::of("pddp", 32, 32, 32, true).unwrap();
        let block = build_block::<f32>(&spec, true, &mut rng()).unwrap();
        assert_eq!(block_param_count(&block, true), 2624 + 4 * 64);
        let bare = build_block::<f32>(&spec, false, &mut rng()).unwrap();
        assert_eq!(block_param_count(&bare, true), 2624);
    }

    #[test]
    fn residual_needs_equal_channels() {
        let spec = BlockSpec::of("pddp", 32, 32, 64, true).unwrap();
        assert!(matches!(build_block::<f32>(&spec, true, &mut rng()), Err(Error::Config(_))));
        let spec = spec.with_projection(1);
        assert!(build_block::<f32>(&spec, true, &mut rng()).is_ok());
    }

    #[test]
    fn inconsistent_table_counts_are_rejected() {
        let mut spec = BlockSpec::of("pddp", 8, 8, 8, true).unwrap();
        spec.nd = 1;
        assert!(build_block::<f32>(&spec, true, &mut rng()).is_err());
    }

    #[test]
    fn zeroed_block_with_zero_scale_is_relu_passthrough() {
        let spec = BlockSpec::of("pddp", 4, 4, 4, true).unwrap();
        let mut block = build_block::<f64>(&spec, true, &mut rng()).unwrap();
        block.visit_params_mut("", &mut |name, p| {
            if name.ends_with("conv.weight") || name.ends_with("norm.scale") {
                p.value.fill(0.0);
            }
        });
        let x = Tensor::<f64>::from_fn([1, 4, 5, 5], |[_, c, y, x]| ((c * 25 + y * 5 + x) as f64 * 0.7).sin());
        for mode in [Mode::Train, Mode::Eval] {
            let y = block.forward(&x, mode).unwrap();
            for (a, b) in y.data().iter().zip(x.data()) {
                assert!((a - b.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pddp_receptive_field_is_five_by_five() {
        let spec = BlockSpec::of("pddp", 3, 4, 3, false).unwrap();
        let mut block = build_block::<f64>(&spec, true, &mut rng()).unwrap();
        let x = Tensor::<f64>::from_fn([1, 3, 9, 9], |[_, c, y, x]| ((c * 81 + y * 9 + x) as f64 * 0.31).cos());
        let base = block.forward(&x, Mode::Eval).unwrap();
        let (cy, cx) = (4usize, 4usize);
        for py in 0..9usize {
            for px in 0..9usize {
                let mut x2 = x.clone();
                for c in 0..3 {
                    let v = x2.at([0, c, py, px]);
                    x2.set([0, c, py, px], v + 1.0);
                }
                let y2 = block.forward(&x2, Mode::Eval).unwrap();
                let inside = py.abs_diff(cy) <= 2 && px.abs_diff(cx) <= 2;
                let changed = (0..3).any(|c| y2.at([0, c, cy, cx]) != base.at([0, c, cy, cx]));
                if !inside {
                    assert!(!changed, "pixel ({py},{px}) leaked into the centre output");
                }
            }
        }
    }

    #[test]
    fn poolblock_modes() {
        let add = build_poolblock::<f32>(32, 32).unwrap();
        assert_eq!(add.fusion(), FusionMode::Add);
        assert_eq!(add.param_count(), 0);
        let cat = build_poolblock::<f32>(32, 64).unwrap();
        assert_eq!(cat.fusion(), FusionMode::Concat);
        assert!(build_poolblock::<f32>(32, 48).is_err());
        assert!(build_poolblock::<f32>(32, 16).is_err());
    }

    #[test]
    fn poolblock_shapes_and_constant_map() {
        let mut add = build_poolblock::<f32>(3, 3).unwrap();
        let x = Tensor::full([1, 3, 6, 8], 1.5f32);
        let y = add.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), [1, 3, 3, 4]);
        assert!(y.data().iter().all(|&v| v == 3.0));

        let mut cat = build_poolblock::<f32>(3, 6).unwrap();
        let x = Tensor::from_fn([2, 3, 4, 4], |[b, c, y, x]| (b + c * 3 + y * x) as f32);
        let y = cat.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), [2, 6, 2, 2]);
        let (max, avg) = y.split_channels(3).unwrap();
        assert_eq!(max, pool2d(&x, crate::ops::PoolMode::Max, 2, 2).unwrap());
        assert_eq!(avg, pool2d(&x, crate::ops::PoolMode::Avg, 2, 2).unwrap());
    }

    #[test]
    fn fblock_shapes_and_params() {
        let fb = build_fblock::<f32>(32, 32, true, &mut rng()).unwrap();
        assert_eq!(fb.unit().conv.weight().param_count(), 1024);
        let mut fb = build_fblock::<f32>(128, 64, true, &mut rng()).unwrap();
        let y = fb.forward(&Tensor::zeros([1, 128, 3, 5]), Mode::Eval).unwrap();
        assert_eq!(y.shape(), [1, 64, 6, 10]);
    }

    #[test]
    fn fblock_on_zero_input_is_relu_of_shift() {
        let mut fb = build_fblock::<f64>(4, 2, true, &mut rng()).unwrap();
        fb.visit_params_mut("", &mut |name, p| {
            if name.ends_with("norm.shift") {
                p.value.data_mut().copy_from_slice(&[0.25, -0.5]);
            }
        });
        let y = fb.forward(&Tensor::zeros([1, 4, 2, 2]), Mode::Train).unwrap();
        assert!(y.plane(0, 0).iter().all(|&v| v == 0.25));
        assert!(y.plane(0, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fusion_channel_rules() {
        assert_eq!(FusionMode::Concat.output_channels(32, 32).unwrap(), 64);
        assert_eq!(FusionMode::Add.output_channels(32, 32).unwrap(), 32);
        assert!(FusionMode::Add.output_channels(32, 64).is_err());
    }
}
