//! Images, labels, manifests and the debug PNG writer.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Label value of pixels excluded from the loss and from matching.
pub const IGNORE: f32 = -1.0;

pub const DEFAULT_GAMMA_LO: f32 = 0.0;
pub const DEFAULT_GAMMA_HI: f32 = 0.5;

fn open(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// 8-bit RGB or grayscale PNG/PPM/PGM as `1×3×h×w` in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let img = open(path)?;
    let is_gray = matches!(img.color().channel_count(), 1 | 2);
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros([1, 3, h, w]);
    for (x, y, p) in rgb.enumerate_pixels() {
        for c in 0..3 {
            let v = if is_gray { p.0[0] } else { p.0[c] };
            t.set([0, c, y as usize, x as usize], v as f32 / 255.0);
        }
    }
    Ok(t)
}

/// Grayscale raster as `1×1×h×w` in `[0, 1]`; colour inputs are converted to luma.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let g = open(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    Tensor::new([1, 1, h, w], g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect())
}

/// `v ≥ hi → 1`, `v ≤ lo → 0`, otherwise [`IGNORE`]. Negative inputs are
/// already ignored and stay so, which makes the rule idempotent.
pub fn ternarize(v: f32, gamma_lo: f32, gamma_hi: f32) -> f32 {
    if v < 0.0 {
        IGNORE
    } else if v >= gamma_hi {
        1.0
    } else if v <= gamma_lo {
        0.0
    } else {
        IGNORE
    }
}

pub fn ternarize_map(map: &Tensor, gamma_lo: f32, gamma_hi: f32) -> Tensor {
    map.map(|v| ternarize(v, gamma_lo, gamma_hi))
}

pub fn load_label(path: impl AsRef<Path>, gamma_lo: f32, gamma_hi: f32) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&gamma_lo) || !(0.0..=1.0).contains(&gamma_hi) || gamma_lo >= gamma_hi {
        return Err(Error::config(format!(
            "label band needs 0 <= gamma_lo < gamma_hi <= 1, got {gamma_lo}, {gamma_hi}"
        )));
    }
    Ok(ternarize_map(&load_gray(path)?, gamma_lo, gamma_hi))
}

/// Writes a `1×1×h×w` (or `h×w` single-plane) map as 8-bit grayscale, `round(255·p)`.
pub fn save_png(path: impl AsRef<Path>, map: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if map.n() != 1 || map.c() != 1 {
        return Err(Error::shape(format!("save_png expects 1x1xHxW, got {:?}", map.shape())));
    }
    let (h, w) = (map.h(), map.w());
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([to_u8(map.at([0, 0, y as usize, x as usize]))])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes a `1×3×h×w` image as 8-bit RGB PNG.
pub fn save_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    if image.n() != 1 || image.c() != 3 {
        return Err(Error::shape(format!("save_image expects 1x3xHxW, got {:?}", image.shape())));
    }
    let img = RgbImage::from_fn(image.w() as u32, image.h() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([0, 1, 2].map(|c| to_u8(image.at([0, c, y, x]))))
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn to_u8(p: f32) -> u8 {
    (255.0 * p.clamp(0.0, 1.0)).round() as u8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub image: PathBuf,
    pub labels: Vec<PathBuf>,
    pub split: Split,
    /// 1-based line in the manifest.
    pub line: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Record> {
        self.records.iter().filter(move |r| r.split == split)
    }
}

/// Parses `image<TAB>label[;label…]<TAB>train|test` lines. Relative paths are
/// resolved against the manifest's directory; blank lines and `#` comments
/// are skipped.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p.trim());
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::data(format!("{}:{line_no}: {msg}", path.display()));
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(&format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let split = match fields[2].trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(&format!("split must be 'train' or 'test', got '{other}'"))),
        };
        if fields[0].trim().is_empty() {
            return Err(bad("empty image path"));
        }
        let labels: Vec<PathBuf> = fields[1]
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(resolve)
            .collect();
        if labels.is_empty() {
            return Err(bad("no label paths"));
        }
        let image = resolve(fields[0]);
        for p in std::iter::once(&image).chain(&labels) {
            if !p.is_file() {
                return Err(Error::data(format!(
                    "{}:{line_no}: missing file {}",
                    path.display(),
                    p.display()
                )));
            }
        }
        records.push(Record {
            image,
            labels,
            split,
            line: line_no,
        });
    }
    if records.is_empty() {
        return Err(Error::data(format!("{}: empty manifest", path.display())));
    }
    Ok(DatasetManifest { records })
}

/// An image with every annotator's ternarized label map.
#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Tensor,
    pub labels: Vec<Tensor>,
}

pub fn load_sample(record: &Record, gamma_lo: f32, gamma_hi: f32) -> Result<Sample> {
    let image = load_image(&record.image)?;
    let mut labels = Vec::with_capacity(record.labels.len());
    for p in &record.labels {
        let label = load_label(p, gamma_lo, gamma_hi)?;
        if (label.h(), label.w()) != (image.h(), image.w()) {
            return Err(Error::data(format!(
                "{}: label is {}x{}, image {} is {}x{}",
                p.display(),
                label.h(),
                label.w(),
                record.image.display(),
                image.h(),
                image.w()
            )));
        }
        labels.push(label);
    }
    Ok(Sample { image, labels })
}
