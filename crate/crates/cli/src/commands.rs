//! Subcommand bodies.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use uhnet_core::eval::{evaluate, nms_thin, uniform_thresholds, BinaryMap, EdgeMap, EvalOptions, GroundTruthSet, BSDS_MAX_DIST};
use uhnet_core::io::{
    load_gray, load_image, load_manifest, save_png, ternarize_map, DatasetManifest, Record, Split, DEFAULT_GAMMA_HI,
    DEFAULT_GAMMA_LO,
};
use uhnet_core::nn::Layer;
use uhnet_core::train::{fit, AdamW, AugmentFlags, OptimizerState, TrainConfig, TrainSample};
use uhnet_core::{audit, Error, Model, ModelConfig, Result, Tensor, Transition};

use crate::settings::Settings;
use crate::{AuditArgs, BenchArgs, EvalArgs, InferArgs, ModelArgs, TrainArgs};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitSel {
    Train,
    Test,
    All,
}

impl FromStr for SplitSel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Self::Train),
            "test" => Ok(Self::Test),
            "all" => Ok(Self::All),
            _ => Err(format!("expected train, test or all, got '{s}'")),
        }
    }
}

impl SplitSel {
    fn records(self, m: &DatasetManifest) -> Vec<&Record> {
        m.records
            .iter()
            .filter(|r| match self {
                Self::Train => r.split == Split::Train,
                Self::Test => r.split == Split::Test,
                Self::All => true,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSpec(pub Vec<f64>);

impl FromStr for ThresholdSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        if !s.contains(',') {
            if let Ok(n) = s.parse::<usize>() {
                if n == 0 {
                    return Err("need at least one threshold".into());
                }
                return Ok(Self(uniform_thresholds(n)));
            }
        }
        let ts = s
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|e| format!("'{t}': {e}")))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if ts.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err("thresholds must lie in [0, 1)".into());
        }
        if ts.windows(2).any(|p| p[0] >= p[1]) {
            return Err("thresholds must be strictly increasing".into());
        }
        Ok(Self(ts))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "table" => Ok(Self::Table),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("expected table or csv, got '{s}'")),
        }
    }
}

struct ModelChoice {
    preset: String,
    config: ModelConfig,
}

fn model_choice(m: &ModelArgs, s: &Settings) -> Result<ModelChoice> {
    let preset = s.or("preset", m.preset.clone(), "uhnet".to_string())?;
    let mut config = ModelConfig::preset(&preset)?;
    config.block = s.or("block", m.block.clone(), config.block)?;
    if let Some(t) = s.pick::<String>("transition", m.transition.clone())? {
        config.transition = t.parse::<Transition>()?;
    }
    config.norm_enabled = s.or("norm", m.norm, config.norm_enabled)?;
    config.validate_default()?;
    Ok(ModelChoice { preset, config })
}

fn param_header(choice: &ModelChoice, model: &Model) -> String {
    let n = model.param_count();
    let mut line = format!(
        "model {} (block {}, transition {}, norm {}): {n} parameters",
        choice.preset, choice.config.block, choice.config.transition, choice.config.norm_enabled
    );
    if let Some(r) = ModelConfig::reference_params(&choice.preset) {
        let _ = write!(line, ", reference {:.1}k ({:+.1}%)", r / 1e3, 100.0 * (n as f64 - r) / r);
    }
    line
}

fn load_model(choice: &ModelChoice, checkpoint: Option<&Path>, seed: u64) -> Result<Model> {
    match checkpoint {
        Some(p) => Model::load(p, &choice.config),
        None => Model::build(&choice.config, seed),
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Annotator maps are averaged before the ignore band is applied.
fn training_sample(r: &Record, gamma_lo: f32, gamma_hi: f32) -> Result<TrainSample> {
    let image = load_image(&r.image)?;
    let mut sum: Option<Tensor> = None;
    for p in &r.labels {
        let g = load_gray(p)?;
        if (g.h(), g.w()) != (image.h(), image.w()) {
            return Err(Error::Data(format!(
                "{}: label is {}x{}, image {} is {}x{}",
                p.display(),
                g.h(),
                g.w(),
                r.image.display(),
                image.h(),
                image.w()
            )));
        }
        sum = Some(match sum {
            None => g,
            Some(acc) => acc.add(&g)?,
        });
    }
    let k = r.labels.len() as f32;
    let mean = sum.expect("manifest records carry at least one label").map(|v| v / k);
    Ok(TrainSample {
        image,
        label: ternarize_map(&mean, gamma_lo, gamma_hi),
        name: r.image.display().to_string(),
    })
}

fn model_cfg_text(choice: &ModelChoice) -> String {
    format!(
        "preset = {}\nblock = {}\ntransition = {}\nnorm = {}\n",
        choice.preset, choice.config.block, choice.config.transition, choice.config.norm_enabled
    )
}

pub fn train(a: &TrainArgs, s: &Settings) -> Result<()> {
    let choice = model_choice(&a.model, s)?;
    let manifest_path: PathBuf = s.required("manifest", a.manifest.clone())?;
    let output = s.or("output", a.output.clone(), PathBuf::from("runs/uhnet"))?;
    let seed = s.or("seed", a.seed, 0)?;
    let gamma_lo = s.or("gamma_lo", a.gamma_lo, DEFAULT_GAMMA_LO)?;
    let gamma_hi = s.or("gamma_hi", a.gamma_hi, DEFAULT_GAMMA_HI)?;
    if !(0.0..=1.0).contains(&gamma_lo) || !(0.0..=1.0).contains(&gamma_hi) || gamma_lo >= gamma_hi {
        return Err(Error::Config(format!(
            "label band needs 0 <= gamma_lo < gamma_hi <= 1, got {gamma_lo}, {gamma_hi}"
        )));
    }
    let defaults = TrainConfig::default();
    let cfg = TrainConfig {
        epochs: s.or("epochs", a.epochs, defaults.epochs)?,
        batch_size: s.or("batch_size", a.batch_size, defaults.batch_size)?,
        augment: if s.or("augment", a.augment, true)? {
            AugmentFlags::standard()
        } else {
            AugmentFlags::none()
        },
        shuffle: s.or("shuffle", a.shuffle, defaults.shuffle)?,
        seed,
        max_steps: s.pick("max_steps", a.max_steps)?,
        output_dir: Some(output.clone()),
    };
    let opt_defaults = AdamW::default();
    let adamw = AdamW {
        lr: s.or("lr", a.lr, opt_defaults.lr)?,
        weight_decay: s.or("weight_decay", a.weight_decay, opt_defaults.weight_decay)?,
        ..opt_defaults
    };
    cfg.validate()?;
    adamw.validate()?;

    let manifest = load_manifest(&manifest_path)?;
    let records = SplitSel::Train.records(&manifest);
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no train records", manifest_path.display())));
    }
    let data = records
        .iter()
        .map(|r| training_sample(r, gamma_lo, gamma_hi))
        .collect::<Result<Vec<_>>>()?;

    let mut model = Model::build(&choice.config, seed)?;
    info!("{}", param_header(&choice, &model));
    info!("training on {} images for {} epochs, writing to {}", data.len(), cfg.epochs, output.display());
    let mut opt = OptimizerState::new(adamw);
    let report = fit(&mut model, &data, &cfg, &mut opt)?;

    let final_path = output.join("model.uhck");
    model.save(&final_path)?;
    let cfg_path = output.join("model.cfg");
    fs::write(&cfg_path, model_cfg_text(&choice)).map_err(|e| io_err(&cfg_path, e))?;
    let last = report.log.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} steps, last loss {last:.5}; weights {}, config {}, log {}",
        report.steps,
        final_path.display(),
        cfg_path.display(),
        output.join("loss.csv").display()
    );
    Ok(())
}

fn output_name(image: &Path) -> Result<String> {
    image
        .file_stem()
        .and_then(|s| s.to_str())
        .map(|s| format!("{s}.png"))
        .ok_or_else(|| Error::Data(format!("{}: cannot derive an output name", image.display())))
}

pub fn infer(a: &InferArgs, s: &Settings) -> Result<()> {
    let choice = model_choice(&a.model, s)?;
    let checkpoint: PathBuf = s.required("checkpoint", a.checkpoint.clone())?;
    let output = s.or("output", a.output.clone(), PathBuf::from("preds"))?;
    let nms = s.or("nms", a.nms, false)?;
    let mut inputs = a.images.clone();
    if let Some(m) = s.pick::<PathBuf>("manifest", a.manifest.clone())? {
        let manifest = load_manifest(&m)?;
        let split = s.or("split", a.split, SplitSel::Test)?;
        inputs.extend(split.records(&manifest).into_iter().map(|r| r.image.clone()));
    }
    if inputs.is_empty() {
        return Err(Error::Usage("no input images: pass IMAGE paths or --manifest".into()));
    }
    let mut names = BTreeSet::new();
    for p in &inputs {
        let name = output_name(p)?;
        if !names.insert(name.clone()) {
            return Err(Error::Config(format!("two inputs would both be written to {name}")));
        }
    }

    let mut model = load_model(&choice, Some(&checkpoint), 0)?;
    fs::create_dir_all(&output).map_err(|e| io_err(&output, e))?;
    for p in &inputs {
        let image = load_image(p)?;
        let mut map = EdgeMap::from_tensor(&model.predict(&image)?)?;
        if nms {
            map = nms_thin(&map);
        }
        let dst = output.join(output_name(p)?);
        save_png(&dst, &map.to_tensor())?;
        info!("{} -> {}", p.display(), dst.display());
    }
    println!("wrote {} edge maps to {}", inputs.len(), output.display());
    Ok(())
}

fn ground_truth(r: &Record) -> Result<GroundTruthSet> {
    let maps = r
        .labels
        .iter()
        .map(|p| {
            let g = load_gray(p)?;
            Ok(BinaryMap::from_fn(g.h(), g.w(), |y, x| g.at([0, 0, y, x]) >= 0.5))
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruthSet::new(maps).map_err(|e| Error::Data(format!("{}: {e}", r.image.display())))
}

fn is_png(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn eval(a: &EvalArgs, s: &Settings) -> Result<()> {
    let preds: PathBuf = s.required("preds", a.preds.clone())?;
    let manifest_path: PathBuf = s.required("manifest", a.manifest.clone())?;
    let split = s.or("split", a.split, SplitSel::Test)?;
    let max_dist = s.or("max_dist", a.max_dist, BSDS_MAX_DIST)?;
    if !(0.0..1.0).contains(&max_dist) {
        return Err(Error::Config(format!("--max-dist must lie in [0, 1), got {max_dist}")));
    }
    let thresholds = s.or("thresholds", a.thresholds.clone(), ThresholdSpec(uniform_thresholds(99)))?;
    let thin = s.or("thin", a.thin, true)?;
    let output = s.or("output", a.output.clone(), preds.join("pr_table.csv"))?;

    let manifest = load_manifest(&manifest_path)?;
    let records = split.records(&manifest);
    if records.is_empty() {
        return Err(Error::Data(format!("{}: no records in the selected split", manifest_path.display())));
    }
    let entries = fs::read_dir(&preds).map_err(|e| io_err(&preds, e))?;
    let mut found = 0;
    for entry in entries {
        let entry = entry.map_err(|e| io_err(&preds, e))?;
        if is_png(&entry.path()) {
            found += 1;
        }
    }
    if found != records.len() {
        return Err(Error::Data(format!(
            "{} holds {found} prediction PNGs but the manifest selects {} images",
            preds.display(),
            records.len()
        )));
    }
    let mut maps = Vec::with_capacity(records.len());
    let mut gts = Vec::with_capacity(records.len());
    for r in &records {
        let p = preds.join(output_name(&r.image)?);
        if !p.is_file() {
            return Err(Error::Data(format!("missing prediction {} for {}", p.display(), r.image.display())));
        }
        let map = EdgeMap::from_tensor(&load_gray(&p)?)?;
        let gt = ground_truth(r)?;
        if (map.h(), map.w()) != (gt.h(), gt.w()) {
            return Err(Error::Data(format!(
                "{} is {}x{} but its labels are {}x{}",
                p.display(),
                map.h(),
                map.w(),
                gt.h(),
                gt.w()
            )));
        }
        maps.push(map);
        gts.push(gt);
    }
    let opts = EvalOptions {
        max_dist_fraction: max_dist,
        thresholds: thresholds.0,
        thin,
    };
    let summary = evaluate(&maps, &gts, &opts)?;
    fs::write(&output, summary.pr_table_csv()).map_err(|e| io_err(&output, e))?;
    println!("{}", summary.summary_line());
    info!(
        "{} images, ODS threshold {:.4}, table {}",
        maps.len(),
        summary.ods_threshold,
        output.display()
    );
    Ok(())
}

pub fn audit(a: &AuditArgs, s: &Settings) -> Result<()> {
    let choice = model_choice(&a.model, s)?;
    let size = s.or("size", a.size, 200)?;
    let format = s.or("format", a.format, Format::Table)?;
    let checkpoint = s.pick::<PathBuf>("checkpoint", a.checkpoint.clone())?;
    let model = load_model(&choice, checkpoint.as_deref(), 0)?;
    let report = audit::count_macs(&model, size, size)?;
    let blocks = audit::block_report()?;
    match format {
        Format::Table => {
            println!("block parameter counts (convolutions only)");
            print!("{}", audit::block_table(&blocks));
            println!();
            println!("{}", param_header(&choice, &model));
            print!("{}", report.to_table());
        }
        Format::Csv => {
            println!("block,c_in,c_mid,c_out,ns,nd,params");
            for b in &blocks {
                println!("{},{},{},{},{},{},{}", b.kind, b.c_in, b.c_mid, b.c_out, b.ns, b.nd, b.params);
            }
            println!();
            print!("{}", report.to_csv());
        }
    }
    Ok(())
}

pub fn bench(a: &BenchArgs, s: &Settings) -> Result<()> {
    let choice = model_choice(&a.model, s)?;
    let size = s.or("size", a.size, 200)?;
    let iters = s.or("iters", a.iters, 50)?;
    let warmup = s.or("warmup", a.warmup, 3)?;
    let seed = s.or("seed", a.seed, 0)?;
    let checkpoint = s.pick::<PathBuf>("checkpoint", a.checkpoint.clone())?;
    let mut model = load_model(&choice, checkpoint.as_deref(), seed)?;
    println!("{}", param_header(&choice, &model));
    let fps = audit::bench_fps(&mut model, size, size, warmup, iters)?;
    println!("{fps}");
    Ok(())
}
