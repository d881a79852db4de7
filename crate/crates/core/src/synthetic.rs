//! Procedural images with exactly known edges: flat-coloured rectangles and
//! ellipses over a flat background. A pixel is labelled an edge when any of
//! its 4-neighbours belongs to a different region.

use rand::{Rng, SeedableRng};

use crate::nn::SeedRng;
use crate::tensor::Tensor;
use crate::train::TrainSample;

enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64 },
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
}

impl Shape {
    fn contains(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape::Ellipse { cy, cx, ry, rx } => ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2) <= 1.0,
        }
    }
}

fn colour(rng: &mut SeedRng, avoid: &[[f32; 3]]) -> [f32; 3] {
    loop {
        let c = [0; 3].map(|_| rng.random_range(0.0..1.0f32));
        let far = avoid
            .iter()
            .all(|a| a.iter().zip(&c).map(|(p, q)| (p - q).abs()).fold(0.0, f32::max) >= 0.35);
        if far {
            return c;
        }
    }
}

/// One `h×w` sample with 2 to 4 shapes; deterministic in `seed`.
pub fn synthetic_sample(h: usize, w: usize, seed: u64) -> TrainSample {
    let mut rng = SeedRng::seed_from_u64(seed);
    let (hf, wf) = (h as f64, w as f64);
    let mut colours = vec![colour(&mut rng, &[])];
    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(2..=4) {
        let shape = if rng.random_bool(0.5) {
            let y0 = rng.random_range(0.05..0.6) * hf;
            let x0 = rng.random_range(0.05..0.6) * wf;
            Shape::Rect {
                y0,
                x0,
                y1: y0 + rng.random_range(0.2..0.4) * hf,
                x1: x0 + rng.random_range(0.2..0.4) * wf,
            }
        } else {
            Shape::Ellipse {
                cy: rng.random_range(0.25..0.75) * hf,
                cx: rng.random_range(0.25..0.75) * wf,
                ry: rng.random_range(0.1..0.25) * hf,
                rx: rng.random_range(0.1..0.25) * wf,
            }
        };
        let c = colour(&mut rng, &colours);
        colours.push(c);
        shapes.push(shape);
    }
    let region: Vec<usize> = (0..h * w)
        .map(|i| {
            let (y, x) = ((i / w) as f64 + 0.5, (i % w) as f64 + 0.5);
            shapes
                .iter()
                .enumerate()
                .rev()
                .find(|(_, s)| s.contains(y, x))
                .map_or(0, |(k, _)| k + 1)
        })
        .collect();
    let image = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| colours[region[y * w + x]][c]);
    let label = Tensor::from_fn([1, 1, h, w], |[_, _, y, x]| {
        let r = region[y * w + x];
        let differs = (y > 0 && region[(y - 1) * w + x] != r)
            || (y + 1 < h && region[(y + 1) * w + x] != r)
            || (x > 0 && region[y * w + x - 1] != r)
            || (x + 1 < w && region[y * w + x + 1] != r);
        if differs {
            1.0
        } else {
            0.0
        }
    });
    TrainSample {
        image,
        label,
        name: format!("synthetic-{seed}"),
    }
}

pub fn synthetic_dataset(n: usize, h: usize, w: usize, seed: u64) -> Vec<TrainSample> {
    (0..n as u64).map(|i| synthetic_sample(h, w, seed.wrapping_mul(1000).wrapping_add(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_are_binary_with_both_classes() {
        for s in synthetic_dataset(8, 64, 64, 1) {
            let pos = s.label.data().iter().filter(|&&v| v == 1.0).count();
            assert!(s.label.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!(pos > 20 && pos < 64 * 64 / 2, "{pos}");
        }
    }

    #[test]
    fn deterministic() {
        let a = synthetic_sample(16, 20, 5);
        let b = synthetic_sample(16, 20, 5);
        assert_eq!((a.image, a.label), (b.image, b.label));
    }
}
