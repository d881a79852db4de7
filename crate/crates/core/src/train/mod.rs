//! Loss, optimizer, augmentation and the training loop.

mod augment;
mod loss;
mod optim;

pub use augment::{augment, resize_label, AugmentFlags, Transform};
pub use loss::{balanced_bce, class_balance, PROB_CLAMP};
pub use optim::{adamw_step, adamw_update, AdamW, OptimizerState};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{Layer, Mode, SeedRng};
use crate::tensor::Tensor;

/// One training pair: a `1×3×h×w` image and a `1×1×h×w` ternary label.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub image: Tensor,
    pub label: Tensor,
    /// Shown in warnings.
    pub name: String,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub augment: AugmentFlags,
    pub shuffle: bool,
    pub seed: u64,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
    /// Where `epoch_{k}.uhck` and `loss.csv` go.
    pub output_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 1,
            augment: AugmentFlags::standard(),
            shuffle: true,
            seed: 0,
            max_steps: None,
            output_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.augment.scales.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::config("augmentation scales must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub log: Vec<LossRecord>,
    /// Mean step loss per completed epoch.
    pub epoch_means: Vec<f64>,
    pub skipped_mismatch: usize,
    pub skipped_all_ignore: usize,
    pub checkpoints: Vec<PathBuf>,
    pub steps: usize,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,step,loss\n");
        for r in &self.log {
            let _ = writeln!(s, "{},{},{}", r.epoch, r.step, r.loss);
        }
        s
    }
}

/// Checks a sample once up front; `Some(reason)` means it is skipped.
fn unusable(s: &TrainSample) -> Option<(&'static str, String)> {
    if s.image.n() != 1 || s.image.c() != 3 || s.label.n() != 1 || s.label.c() != 1 {
        return Some(("mismatch", format!("{}: unexpected tensor layout", s.name)));
    }
    if (s.image.h(), s.image.w()) != (s.label.h(), s.label.w()) {
        return Some((
            "mismatch",
            format!(
                "{}: image {}x{} vs label {}x{}",
                s.name,
                s.image.h(),
                s.image.w(),
                s.label.h(),
                s.label.w()
            ),
        ));
    }
    if class_balance(&s.label).is_none() {
        return Some(("ignore", format!("{}: every label pixel is ignored", s.name)));
    }
    None
}

fn stack(items: &[(Tensor, Tensor)]) -> Result<(Tensor, Tensor)> {
    let [_, c, h, w] = items[0].0.shape();
    let mut img = Vec::with_capacity(items.len() * c * h * w);
    let mut lab = Vec::with_capacity(items.len() * h * w);
    for (i, l) in items {
        img.extend_from_slice(i.data());
        lab.extend_from_slice(l.data());
    }
    Ok((
        Tensor::new([items.len(), c, h, w], img)?,
        Tensor::new([items.len(), 1, h, w], lab)?,
    ))
}

/// One forward/backward pass on a batch, returning its loss. Gradients accumulate.
fn accumulate(model: &mut Model, image: &Tensor, label: &Tensor, weight: f32) -> Result<f64> {
    let pred = model.forward(image, Mode::Train)?;
    let (loss, mut grad) = balanced_bce(&pred, label)?;
    grad.scale(weight);
    model.backward(&grad)?;
    Ok(loss as f64)
}

/// Trains `model` in place. Batches whose augmented samples share a size are
/// stacked; otherwise the batch is processed sample by sample with gradients
/// averaged.
pub fn fit(model: &mut Model, data: &[TrainSample], cfg: &TrainConfig, opt: &mut OptimizerState) -> Result<TrainReport> {
    cfg.validate()?;
    opt.config.validate()?;
    if data.is_empty() {
        return Err(Error::data("training set is empty"));
    }
    let mut report = TrainReport::default();
    let mut usable = Vec::new();
    for (i, s) in data.iter().enumerate() {
        match unusable(s) {
            Some(("mismatch", msg)) => {
                warn!("skipping {msg}");
                report.skipped_mismatch += 1;
            }
            Some((_, msg)) => {
                warn!("skipping {msg}");
                report.skipped_all_ignore += 1;
            }
            None => usable.push(i),
        }
    }
    if usable.is_empty() {
        return Err(Error::data(format!(
            "no usable training samples ({} size mismatches, {} fully ignored)",
            report.skipped_mismatch, report.skipped_all_ignore
        )));
    }
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rng = SeedRng::seed_from_u64(cfg.seed);
    'epochs: for epoch in 1..=cfg.epochs {
        let mut order = usable.clone();
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_losses = Vec::new();
        for chunk in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break 'epochs;
            }
            let mut items = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, lab) = augment(&data[i].image, &data[i].label, &cfg.augment, &mut rng)?;
                if class_balance(&lab).is_some() {
                    items.push((img, lab));
                }
            }
            if items.is_empty() {
                continue;
            }
            model.zero_grad();
            let same = items.iter().all(|(i, _)| i.shape() == items[0].0.shape());
            let loss = if same {
                let (img, lab) = stack(&items)?;
                accumulate(model, &img, &lab, 1.0)?
            } else {
                let w = 1.0 / items.len() as f32;
                let mut total = 0.0;
                for (img, lab) in &items {
                    total += accumulate(model, img, lab, w)?;
                }
                total / items.len() as f64
            };
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, step {}", report.steps + 1)));
            }
            adamw_step(model, opt)?;
            report.steps += 1;
            report.log.push(LossRecord {
                epoch,
                step: report.steps,
                loss,
            });
            epoch_losses.push(loss);
        }
        if epoch_losses.is_empty() {
            continue;
        }
        let mean = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        info!("epoch {epoch}: mean loss {mean:.5} over {} steps", epoch_losses.len());
        report.epoch_means.push(mean);
        if let Some(dir) = &cfg.output_dir {
            let path = dir.join(format!("epoch_{epoch}.uhck"));
            model.save(&path)?;
            report.checkpoints.push(path);
            write_log(&dir.join("loss.csv"), &report)?;
        }
    }
    if let Some(dir) = &cfg.output_dir {
        write_log(&dir.join("loss.csv"), &report)?;
    }
    Ok(report)
}

fn write_log(path: &Path, report: &TrainReport) -> Result<()> {
    fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))
}

/// Mean loss over `data` without touching gradients or parameters. In
/// [`Mode::Train`] the norm layers use per-image statistics (and update their
/// running averages); [`Mode::Eval`] uses the running averages.
pub fn dataset_loss(model: &mut Model, data: &[TrainSample], mode: Mode) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for s in data.iter().filter(|s| unusable(s).is_none()) {
        let pred = model.forward(&s.image, mode)?;
        total += balanced_bce(&pred, &s.label)?.0 as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::data("no usable samples"));
    }
    Ok(total / n as f64)
}
