//! Central finite-difference checks shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use uhnet_core::nn::{Layer, Mode, SeedRng};
use uhnet_core::Tensor;

pub const EPS: f64 = 1e-4;
pub const TOL: f64 = 1e-5;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

pub fn random_tensor(shape: [usize; 4], rng: &mut SeedRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Values at least `gap` away from zero, for ReLU-style kinks.
pub fn away_from_zero(shape: [usize; 4], gap: f64, rng: &mut SeedRng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates whose central differences at two step sizes disagree,
    /// i.e. a kink lies within the step. Only counted by [`check_layer_smooth`].
    pub nonsmooth: usize,
    /// `(analytic, numeric)` at the largest error.
    pub worst: (f64, f64),
}

impl GradReport {
    fn push(&mut self, a: f64, n: f64) {
        let e = rel_err(a, n);
        if e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = (a, n);
        }
        self.checked += 1;
    }
}

fn weighted(out: &Tensor<f64>, w: &Tensor<f64>) -> f64 {
    out.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
}

/// Every coordinate of the input and of each parameter, as
/// `(analytic gradient, loss after adding δ to that coordinate)`.
/// Returns `Σ |r ⊙ y|`, the magnitude of the terms summed into the loss.
fn for_each_coordinate<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    x: &Tensor<f64>,
    seed: u64,
    mut visit: impl FnMut(&str, f64, &mut dyn FnMut(f64) -> f64),
) -> f64 {
    let mut rng = SeedRng::seed_from_u64(seed);
    let out = layer.forward(x, Mode::Train).expect("forward");
    let r = random_tensor(out.shape(), &mut rng);
    let scale = out.data().iter().zip(r.data()).map(|(a, b)| (a * b).abs()).sum();
    layer.zero_grad();
    let gx = layer.backward(&r).expect("backward");
    let mut param_grads: Vec<(String, Vec<f64>)> = Vec::new();
    layer.visit_params("", &mut |name, p| param_grads.push((name, p.grad.data().to_vec())));

    for i in 0..x.len() {
        let mut at = |d: f64| {
            let mut xp = x.clone();
            xp.data_mut()[i] += d;
            weighted(&layer.forward(&xp, Mode::Train).expect("forward"), &r)
        };
        visit("input", gx.data()[i], &mut at);
    }
    for (name, grads) in &param_grads {
        for (i, &a) in grads.iter().enumerate() {
            let mut at = |d: f64| {
                nudge(layer, name, i, d);
                let l = weighted(&layer.forward(x, Mode::Train).expect("forward"), &r);
                nudge(layer, name, i, -d);
                l
            };
            visit(name, a, &mut at);
        }
    }
    scale
}

fn nudge<L: Layer<f64> + ?Sized>(layer: &mut L, name: &str, i: usize, d: f64) {
    layer.visit_params_mut("", &mut |n, p| {
        if n == name {
            p.value.data_mut()[i] += d;
        }
    });
}

fn central(at: &mut dyn FnMut(f64) -> f64, eps: f64) -> f64 {
    (at(eps) - at(-eps)) / (2.0 * eps)
}

/// Checks input and parameter gradients of `layer` for the scalar loss
/// `Σ r ⊙ layer(x)` with random `r`.
pub fn check_layer<L: Layer<f64> + ?Sized>(layer: &mut L, x: &Tensor<f64>, seed: u64) -> GradReport {
    let mut report = GradReport::default();
    let _ = for_each_coordinate(layer, x, seed, |_, a, at| report.push(a, central(at, EPS)));
    report
}

/// Like [`check_layer`] for whole networks, where ReLU and max-pool kinks
/// and rounding both matter.
///
/// `noise(h) = u·Σ|r ⊙ y| / h` estimates the rounding error of a central
/// difference with step `h`. A coordinate is smooth when its quotients at
/// `eps` and `eps/10` agree within `TOL` plus `noise(eps/10)`; otherwise a
/// kink lies within the step and it is counted, not compared. Smooth
/// coordinates are compared against whichever quotient is closer, since the
/// coarse one carries more truncation error and the fine one more rounding;
/// a difference within that step's `noise` counts as agreement.
///
/// Also returns the tensors none of whose coordinates were smooth.
pub fn check_layer_smooth<L: Layer<f64> + ?Sized>(
    layer: &mut L,
    x: &Tensor<f64>,
    seed: u64,
    eps: f64,
) -> (GradReport, Vec<String>) {
    let mut samples = Vec::new();
    let scale = for_each_coordinate(layer, x, seed, |name, a, at| {
        samples.push((name.to_string(), a, central(at, eps), central(at, eps / 10.0)));
    });
    let noise = |h: f64| f64::EPSILON * scale / h;
    let mut report = GradReport::default();
    let mut covered: std::collections::BTreeMap<String, bool> = Default::default();
    for (name, a, coarse, fine) in samples {
        let agree = (coarse - fine).abs() <= TOL * coarse.abs().max(fine.abs()) + noise(eps / 10.0);
        if !agree {
            report.nonsmooth += 1;
        } else if (a - coarse).abs() <= noise(eps) || (a - fine).abs() <= noise(eps / 10.0) {
            report.checked += 1;
        } else if rel_err(a, fine) < rel_err(a, coarse) {
            report.push(a, fine);
        } else {
            report.push(a, coarse);
        }
        *covered.entry(name).or_default() |= agree;
    }
    let uncovered = covered.into_iter().filter(|(_, c)| !c).map(|(n, _)| n).collect();
    (report, uncovered)
}

/// Gradient check for a pure function with an explicit vector-Jacobian product.
pub fn check_fn(
    x: &Tensor<f64>,
    f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
    vjp: impl Fn(&Tensor<f64>, &Tensor<f64>) -> Tensor<f64>,
    seed: u64,
) -> GradReport {
    let mut rng = SeedRng::seed_from_u64(seed);
    let out = f(x);
    let r = random_tensor(out.shape(), &mut rng);
    let gx = vjp(x, &r);
    let mut report = GradReport::default();
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += EPS;
        let lp = weighted(&f(&xp), &r);
        xp.data_mut()[i] -= 2.0 * EPS;
        let lm = weighted(&f(&xp), &r);
        report.push(gx.data()[i], (lp - lm) / (2.0 * EPS));
    }
    report
}

pub mod suite {
    use super::*;
    use uhnet_core::blocks::{build_block, build_fblock, build_poolblock, BlockSpec};
    use uhnet_core::nn::{BatchNorm, Conv};
    use uhnet_core::ops::*;
    use uhnet_core::train::balanced_bce;

    pub fn randomize_norms<L: Layer<f64> + ?Sized>(layer: &mut L, rng: &mut SeedRng) {
        layer.visit_params_mut("", &mut |name, p| {
            if name.ends_with("scale") {
                p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
            } else if name.ends_with("shift") {
                p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        });
    }

    /// Input whose 2×2 windows have a unique maximum by a clear margin.
    fn distinct(shape: [usize; 4], rng: &mut SeedRng) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - 0.5).collect();
        for i in (1..n).rev() {
            vals.swap(i, rng.random_range(0..=i));
        }
        Tensor::new(shape, vals).unwrap()
    }

    /// Every differentiable piece checked in f64: (name, report).
    pub fn run() -> Vec<(String, GradReport)> {
        let mut rng = SeedRng::seed_from_u64(2024);
        let mut out = Vec::new();

        for (label, kind, c_in, c_out, k, stride) in [
            ("conv3x3", ConvKind::Standard, 2, 3, 3, 1),
            ("conv3x3/s2", ConvKind::Standard, 2, 2, 3, 2),
            ("conv5x5", ConvKind::Standard, 1, 2, 5, 1),
            ("depthwise3x3", ConvKind::Depthwise, 3, 3, 3, 1),
            ("depthwise5x5/s2", ConvKind::Depthwise, 2, 2, 5, 2),
            ("pointwise", ConvKind::Pointwise, 3, 2, 1, 1),
            ("pointwise/s2", ConvKind::Pointwise, 2, 3, 1, 2),
        ] {
            let mut conv = Conv::<f64>::new(kind, c_in, c_out, k, stride, &mut rng).unwrap();
            let x = random_tensor([2, c_in, 4, 4], &mut rng);
            out.push((label.to_string(), check_layer(&mut conv, &x, 1)));
        }

        for (label, mode) in [("maxpool", PoolMode::Max), ("avgpool", PoolMode::Avg)] {
            let x = distinct([1, 2, 4, 4], &mut rng);
            let rep = check_fn(
                &x,
                |x| pool2d(x, mode, 2, 2).unwrap(),
                |x, g| pool2d_backward(x, mode, 2, 2, g).unwrap(),
                2,
            );
            out.push((label.to_string(), rep));
        }
        let x = distinct([1, 1, 4, 4], &mut rng);
        out.push((
            "maxpool3/s1".into(),
            check_fn(
                &x,
                |x| pool2d(x, PoolMode::Max, 3, 1).unwrap(),
                |x, g| pool2d_backward(x, PoolMode::Max, 3, 1, g).unwrap(),
                3,
            ),
        ));

        for factor in [2, 3] {
            let x = random_tensor([1, 2, 3, 4], &mut rng);
            let rep = check_fn(
                &x,
                |x| upsample_bilinear(x, factor).unwrap(),
                |x, g| upsample_bilinear_backward(x.shape(), factor, g).unwrap(),
                4,
            );
            out.push((format!("upsample x{factor}"), rep));
        }

        let x = away_from_zero([1, 2, 4, 4], 0.05, &mut rng);
        out.push((
            "relu".into(),
            check_fn(
                &x,
                |x| activation(x, Activation::Relu),
                |x, g| activation_backward(&activation(x, Activation::Relu), Activation::Relu, g).unwrap(),
                5,
            ),
        ));
        let x = random_tensor([1, 2, 4, 4], &mut rng).map(|v| 4.0 * v);
        out.push((
            "sigmoid".into(),
            check_fn(
                &x,
                |x| activation(x, Activation::Sigmoid),
                |x, g| activation_backward(&activation(x, Activation::Sigmoid), Activation::Sigmoid, g).unwrap(),
                6,
            ),
        ));

        let mut bn = BatchNorm::<f64>::new(3);
        randomize_norms(&mut bn, &mut rng);
        let x = random_tensor([2, 3, 3, 4], &mut rng);
        out.push(("batchnorm(train)".into(), check_layer(&mut bn, &x, 7)));
        let mut bn1 = BatchNorm::<f64>::new(2);
        randomize_norms(&mut bn1, &mut rng);
        let x = random_tensor([1, 2, 2, 2], &mut rng);
        out.push(("batchnorm(train,n=1)".into(), check_layer(&mut bn1, &x, 8)));
        let mut state = NormState::<f64>::new(2);
        state.running_mean.data_mut().copy_from_slice(&[0.3, -0.2]);
        state.running_var.data_mut().copy_from_slice(&[0.7, 1.9]);
        state.scale.data_mut().copy_from_slice(&[1.2, 0.8]);
        let x = random_tensor([1, 2, 4, 4], &mut rng);
        out.push((
            "batchnorm(eval)".into(),
            check_fn(
                &x,
                |x| batch_norm_eval(x, &state, DEFAULT_EPS).unwrap(),
                |x, g| batch_norm_eval_backward(x, &state, DEFAULT_EPS, g).unwrap().0,
                9,
            ),
        ));

        let target = Tensor::<f64>::from_fn([1, 1, 4, 4], |[_, _, y, x]| match (y * 4 + x) % 5 {
            0 => 1.0,
            3 => -1.0,
            _ => 0.0,
        });
        let pred = Tensor::<f64>::from_fn([1, 1, 4, 4], |_| rng.random_range(0.05..0.95));
        out.push((
            "balanced_bce".into(),
            check_fn(
                &pred,
                |p| Tensor::new([1, 1, 1, 1], vec![balanced_bce(p, &target).unwrap().0]).unwrap(),
                |p, g| {
                    let (_, grad) = balanced_bce(p, &target).unwrap();
                    grad.map(|v| v * g.data()[0])
                },
                10,
            ),
        ));

        for kind in ["pddp", "rb1", "lb5x5"] {
            let spec = BlockSpec::of(kind, 3, 4, 3, true).unwrap();
            let mut block = build_block::<f64>(&spec, true, &mut rng).unwrap();
            randomize_norms(&mut block, &mut rng);
            let x = random_tensor([2, 3, 4, 4], &mut rng);
            out.push((format!("{kind} block"), check_layer(&mut block, &x, 11)));
        }
        let mut pool = build_poolblock::<f64>(2, 4).unwrap();
        let x = distinct([1, 2, 4, 4], &mut rng);
        out.push(("poolblock(concat)".into(), check_layer(&mut pool, &x, 12)));
        let mut fb = build_fblock::<f64>(3, 2, true, &mut rng).unwrap();
        randomize_norms(&mut fb, &mut rng);
        let x = random_tensor([2, 3, 2, 2], &mut rng);
        out.push(("fblock".into(), check_layer(&mut fb, &x, 13)));

        out
    }
}
