use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::{lit, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied only to parameters flagged for it.
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

impl AdamW {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// One bias-corrected AdamW update of a flat parameter slice. `step` is the
/// 1-based index of this update.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Scalar>(
    cfg: &AdamW,
    step: u64,
    decay: bool,
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(step as f64);
    let c2 = 1.0 - b2.powf(step as f64);
    let shrink = if decay { 1.0 - cfg.lr * cfg.weight_decay } else { 1.0 };
    for (((p, &g), m), v) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
        let g = g.to_f64_lossy();
        let mn = b1 * m.to_f64_lossy() + (1.0 - b1) * g;
        let vn = b2 * v.to_f64_lossy() + (1.0 - b2) * g * g;
        *m = lit(mn);
        *v = lit(vn);
        let update = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.eps);
        *p = lit(p.to_f64_lossy() * shrink - update);
    }
}

/// Moments per named parameter plus the shared step counter.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar = f32> {
    pub config: AdamW,
    step: u64,
    moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: AdamW) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self, name: &str) -> Option<(&Tensor<T>, &Tensor<T>)> {
        self.moments.get(name).map(|(m, v)| (m, v))
    }
}

/// Applies one AdamW step to every parameter of `layer` from its accumulated
/// gradients. A non-finite gradient rejects the whole step before anything
/// is modified.
pub fn adamw_step<T: Scalar, L: Layer<T> + ?Sized>(layer: &mut L, state: &mut OptimizerState<T>) -> Result<()> {
    let mut bad = None;
    layer.visit_params("", &mut |name, p| {
        if bad.is_none() {
            if let Some(i) = p.grad.data().iter().position(|g| !g.is_finite()) {
                bad = Some(format!("non-finite gradient in '{name}' at element {i}"));
            }
            if p.grad.shape() != p.value.shape() {
                bad = Some(format!("gradient shape mismatch for '{name}'"));
            }
        }
    });
    if let Some(msg) = bad {
        return Err(Error::Numeric(msg));
    }
    state.step += 1;
    let step = state.step;
    let cfg = state.config;
    let moments = &mut state.moments;
    layer.visit_params_mut("", &mut |name, p| {
        let shape = p.value.shape();
        let (m, v) = moments
            .entry(name)
            .or_insert_with(|| (Tensor::zeros(shape), Tensor::zeros(shape)));
        adamw_update(&cfg, step, p.decay, p.value.data_mut(), p.grad.data(), m.data_mut(), v.data_mut());
    });
    Ok(())
}
