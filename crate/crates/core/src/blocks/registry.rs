//! Residual block variants, looked up by name at runtime.
//!
//! Every variant shares the same skeleton: a pointwise expansion, a variant
//! specific stack of spatial convolutions, and a pointwise projection. The
//! variants differ only in that middle stack, which is what they describe.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::ops::ConvKind;

/// One spatial convolution in the middle of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpatialConv {
    pub kind: ConvKind,
    pub k: usize,
}

pub trait BlockVariant: Send + Sync {
    fn name(&self) -> &'static str;

    fn description(&self) -> &'static str;

    /// Spatial convolutions between the two pointwise layers, in order.
    fn spatial_convs(&self) -> Vec<SpatialConv>;

    /// Number of standard (cross-channel) spatial convolutions.
    fn standard_count(&self) -> usize {
        self.spatial_convs()
            .iter()
            .filter(|c| c.kind == ConvKind::Standard)
            .count()
    }

    /// Number of depthwise spatial convolutions.
    fn depthwise_count(&self) -> usize {
        self.spatial_convs()
            .iter()
            .filter(|c| c.kind == ConvKind::Depthwise)
            .count()
    }
}

/// ResNet bottleneck with one standard 3×3.
pub struct Rb1;
/// ResNet bottleneck with two standard 3×3.
pub struct Rb2;
/// Lightweight bottleneck: the 3×3 becomes depthwise.
pub struct Lb;
/// Pointwise, depthwise, depthwise, pointwise.
pub struct Pddp;
/// Lightweight bottleneck with a single 5×5 depthwise.
pub struct Lb5x5;

const STD3: SpatialConv = SpatialConv {
    kind: ConvKind::Standard,
    k: 3,
};
const DW3: SpatialConv = SpatialConv {
    kind: ConvKind::Depthwise,
    k: 3,
};

impl BlockVariant for Rb1 {
    fn name(&self) -> &'static str {
        "rb1"
    }
    fn description(&self) -> &'static str {
        "bottleneck, one standard 3x3"
    }
    fn spatial_convs(&self) -> Vec<SpatialConv> {
        vec![STD3]
    }
}

impl BlockVariant for Rb2 {
    fn name(&self) -> &'static str {
        "rb2"
    }
    fn description(&self) -> &'static str {
        "bottleneck, two standard 3x3"
    }
    fn spatial_convs(&self) -> Vec<SpatialConv> {
        vec![STD3, STD3]
    }
}

impl BlockVariant for Lb {
    fn name(&self) -> &'static str {
        "lb"
    }
    fn description(&self) -> &'static str {
        "lightweight bottleneck, one depthwise 3x3"
    }
    fn spatial_convs(&self) -> Vec<SpatialConv> {
        vec![DW3]
    }
}

impl BlockVariant for Pddp {
    fn name(&self) -> &'static str {
        "pddp"
    }
    fn description(&self) -> &'static str {
        "pointwise, two depthwise 3x3, pointwise"
    }
    fn spatial_convs(&self) -> Vec<SpatialConv> {
        vec![DW3, DW3]
    }
}

impl BlockVariant for Lb5x5 {
    fn name(&self) -> &'static str {
        "lb5x5"
    }
    fn description(&self) -> &'static str {
        "lightweight bottleneck, one depthwise 5x5"
    }
    fn spatial_convs(&self) -> Vec<SpatialConv> {
        vec![SpatialConv {
            kind: ConvKind::Depthwise,
            k: 5,
        }]
    }
}

#[derive(Default)]
pub struct BlockRegistry {
    variants: Vec<Box<dyn BlockVariant>>,
}

impl BlockRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding rb1, rb2, lb, pddp and lb5x5.
    pub fn with_defaults() -> Self {
        let mut reg = Self::new();
        for v in [
            Box::new(Rb1) as Box<dyn BlockVariant>,
            Box::new(Rb2),
            Box::new(Lb),
            Box::new(Pddp),
            Box::new(Lb5x5),
        ] {
            reg.register(v).expect("default variant names are unique");
        }
        reg
    }

    pub fn register(&mut self, variant: Box<dyn BlockVariant>) -> Result<()> {
        if self.get(variant.name()).is_some() {
            return Err(Error::config(format!(
                "block variant '{}' registered twice",
                variant.name()
            )));
        }
        if variant.spatial_convs().iter().any(|c| c.kind == ConvKind::Pointwise || c.k % 2 == 0) {
            return Err(Error::config(format!(
                "block variant '{}' needs odd-sized standard or depthwise spatial convs",
                variant.name()
            )));
        }
        self.variants.push(variant);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&dyn BlockVariant> {
        self.variants
            .iter()
            .find(|v| v.name() == name)
            .map(|v| v.as_ref())
    }

    pub fn require(&self, name: &str) -> Result<&dyn BlockVariant> {
        self.get(name).ok_or_else(|| {
            Error::config(format!(
                "unknown block variant '{name}' (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.variants.iter().map(|v| v.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn BlockVariant> {
        self.variants.iter().map(|v| v.as_ref())
    }
}

/// Process-wide registry with the default variants.
pub fn default_registry() -> &'static BlockRegistry {
    static REGISTRY: OnceLock<BlockRegistry> = OnceLock::new();
    REGISTRY.get_or_init(BlockRegistry::with_defaults)
}
