use rand::Rng;

use crate::error::Result;
use crate::io::IGNORE;
use crate::nn::SeedRng;
use crate::ops::resize_bilinear;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentFlags {
    pub hflip: bool,
    /// Candidate scale factors; empty or `[1.0]` disables scaling.
    pub scales: Vec<f64>,
    /// Random multiples of 90°.
    pub rotate: bool,
}

impl AugmentFlags {
    pub fn none() -> Self {
        Self {
            hflip: false,
            scales: Vec::new(),
            rotate: false,
        }
    }

    pub fn standard() -> Self {
        Self {
            hflip: true,
            scales: vec![0.5, 1.0, 1.5],
            rotate: true,
        }
    }
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self::standard()
    }
}

/// One concrete geometric transform, applied flip, then scale, then rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transform {
    pub flip: bool,
    pub scale: f64,
    pub quarter_turns: usize,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        flip: false,
        scale: 1.0,
        quarter_turns: 0,
    };

    pub fn sample(flags: &AugmentFlags, rng: &mut SeedRng) -> Self {
        let flip = flags.hflip && rng.random_bool(0.5);
        let scale = if flags.scales.is_empty() {
            1.0
        } else {
            flags.scales[rng.random_range(0..flags.scales.len())]
        };
        let quarter_turns = if flags.rotate { rng.random_range(0..4) } else { 0 };
        Self {
            flip,
            scale,
            quarter_turns,
        }
    }

    pub fn apply(&self, image: &Tensor, label: &Tensor) -> Result<(Tensor, Tensor)> {
        let (mut image, mut label) = (image.clone(), label.clone());
        if self.flip {
            image = image.flip_horizontal();
            label = label.flip_horizontal();
        }
        if self.scale != 1.0 {
            let h = ((image.h() as f64 * self.scale).round() as usize).max(1);
            let w = ((image.w() as f64 * self.scale).round() as usize).max(1);
            image = resize_bilinear(&image, h, w)?;
            label = resize_label(&label, h, w)?;
        }
        if self.quarter_turns % 4 != 0 {
            image = image.rotate90(self.quarter_turns);
            label = label.rotate90(self.quarter_turns);
        }
        Ok((image, label))
    }
}

/// Resamples a ternary label: a pixel becomes an edge where the interpolated
/// edge indicator reaches 0.5, otherwise ignored where the ignore indicator
/// does, otherwise background.
pub fn resize_label(label: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let pos = resize_bilinear(&label.map(|v| if v == 1.0 { 1.0 } else { 0.0 }), h, w)?;
    let ign = resize_bilinear(&label.map(|v| if v < 0.0 { 1.0 } else { 0.0 }), h, w)?;
    let data = pos
        .data()
        .iter()
        .zip(ign.data())
        .map(|(&p, &i)| {
            if p >= 0.5 {
                1.0
            } else if i >= 0.5 {
                IGNORE
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(pos.shape(), data)
}

/// Draws a transform from `flags` and applies it to the pair.
pub fn augment(image: &Tensor, label: &Tensor, flags: &AugmentFlags, rng: &mut SeedRng) -> Result<(Tensor, Tensor)> {
    Transform::sample(flags, rng).apply(image, label)
}
