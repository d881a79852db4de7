use std::fmt;
use std::str::FromStr;

use crate::blocks::{default_registry, BlockRegistry};
use crate::error::{Error, Result};

/// How one stage hands its output to the next.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Transition {
    /// Parameter-free max+avg pooling fused by add or concat.
    #[default]
    PoolBlock,
    /// ResNet-style: the first block of the next stage strides by 2 and
    /// carries a 1×1 projection shortcut.
    Shortcut1x1,
}

impl Transition {
    pub fn name(self) -> &'static str {
        match self {
            Transition::PoolBlock => "poolblock",
            Transition::Shortcut1x1 => "shortcut1x1",
        }
    }
}

impl FromStr for Transition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poolblock" => Ok(Transition::PoolBlock),
            "shortcut1x1" => Ok(Transition::Shortcut1x1),
            other => Err(Error::config(format!(
                "unknown transition '{other}' (known: poolblock, shortcut1x1)"
            ))),
        }
    }
}

impl fmt::Display for Transition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub stage_channels: [usize; 3],
    pub blocks_per_stage: usize,
    pub norm_enabled: bool,
    /// Residual block variant used in every stage.
    pub block: String,
    pub transition: Transition,
    /// Also pass the shallower stage through an FBlock-style unit before the add.
    pub fblock_on_skip: bool,
}

/// Named presets and the parameter totals published for them.
pub const PRESETS: [(&str, [usize; 3], f64); 3] = [
    ("uhnet", [32, 32, 32], 42_300.0),
    ("uhnet_m", [32, 64, 128], 232_900.0),
    ("uhnet_l", [64, 128, 256], 873_400.0),
];

impl Default for ModelConfig {
    fn default() -> Self {
        Self::with_channels([32, 32, 32])
    }
}

impl ModelConfig {
    pub fn with_channels(stage_channels: [usize; 3]) -> Self {
        Self {
            stage_channels,
            blocks_per_stage: 4,
            norm_enabled: true,
            block: "pddp".to_string(),
            transition: Transition::PoolBlock,
            fblock_on_skip: false,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let key = name.replace('-', "_").to_ascii_lowercase();
        PRESETS
            .iter()
            .find(|(n, _, _)| *n == key)
            .map(|(_, ch, _)| Self::with_channels(*ch))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown preset '{name}' (known: uhnet, uhnet_m, uhnet_l)"
                ))
            })
    }

    /// Published parameter total for a preset name, if any.
    pub fn reference_params(name: &str) -> Option<f64> {
        let key = name.replace('-', "_").to_ascii_lowercase();
        PRESETS.iter().find(|(n, _, _)| *n == key).map(|(_, _, p)| *p)
    }

    pub fn validate(&self, registry: &BlockRegistry) -> Result<()> {
        registry.require(&self.block)?;
        if self.blocks_per_stage == 0 {
            return Err(Error::config("blocks_per_stage must be at least 1"));
        }
        if self.stage_channels.contains(&0) {
            return Err(Error::config("stage channels must be positive"));
        }
        for pair in self.stage_channels.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if b != a && b != 2 * a {
                return Err(Error::config(format!(
                    "adjacent stages {a} -> {b}: the next stage must keep or double the channels"
                )));
            }
        }
        Ok(())
    }

    pub fn validate_default(&self) -> Result<()> {
        self.validate(default_registry())
    }
}
