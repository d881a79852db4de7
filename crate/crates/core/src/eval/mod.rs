//! Benchmark protocol for edge maps: thinning, tolerant correspondence,
//! precision/recall over thresholds and the ODS, OIS and AP summaries.

mod matching;
mod nms;

pub use matching::{f_measure, match_edges, match_radius, max_matching, BinaryMap, GroundTruthSet, MatchCounts};
pub use nms::{conv_tri, gradient2, nms_thin, orientation, ORIENT_SMOOTH_RADIUS};

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BSDS_MAX_DIST: f64 = 0.0075;
pub const NYUD_MAX_DIST: f64 = 0.011;

/// Edge probabilities, clamped into `[0, 1]` on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeMap {
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl EdgeMap {
    pub fn new(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("edge map {h}x{w} with {} values", data.len())));
        }
        Ok(Self::from_raw(h, w, data))
    }

    pub(crate) fn from_raw(h: usize, w: usize, data: Vec<f32>) -> Self {
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
            .collect();
        Self { h, w, data }
    }

    /// From a `1×1×h×w` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.n() != 1 || t.c() != 1 {
            return Err(Error::shape(format!("edge map tensor must be 1x1xHxW, got {:?}", t.shape())));
        }
        Self::new(t.h(), t.w(), t.data().to_vec())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 1, self.h, self.w], self.data.clone()).expect("length checked on construction")
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.data[y * self.w + x]
    }

    /// Pixels with value `≥ t`.
    pub fn binarize(&self, t: f64) -> BinaryMap {
        BinaryMap::from_fn(self.h, self.w, |y, x| self.get(y, x) as f64 >= t)
    }
}

/// `n` evenly spaced thresholds strictly inside `(0, 1)`: `k / (n + 1)`.
pub fn uniform_thresholds(n: usize) -> Vec<f64> {
    (1..=n).map(|k| k as f64 / (n + 1) as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub max_dist_fraction: f64,
    pub thresholds: Vec<f64>,
    /// Apply [`nms_thin`] before thresholding.
    pub thin: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            max_dist_fraction: BSDS_MAX_DIST,
            thresholds: uniform_thresholds(99),
            thin: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub ods: f64,
    pub ods_threshold: f64,
    pub ois: f64,
    pub ap: f64,
    /// Dataset-aggregated precision and recall per threshold.
    pub pr_table: Vec<PrRow>,
}

impl EvalSummary {
    pub fn pr_table_csv(&self) -> String {
        let mut s = String::from("threshold,precision,recall,f1\n");
        for r in &self.pr_table {
            let _ = writeln!(s, "{:.4},{:.6},{:.6},{:.6}", r.threshold, r.precision, r.recall, r.f1);
        }
        s
    }

    pub fn summary_line(&self) -> String {
        format!("ODS={:.3},OIS={:.3},AP={:.3}", self.ods, self.ois, self.ap)
    }
}

/// Counts for one image at every threshold.
pub fn image_counts(pred: &EdgeMap, gts: &GroundTruthSet, opts: &EvalOptions) -> Result<Vec<MatchCounts>> {
    let thinned;
    let map = if opts.thin {
        thinned = nms_thin(pred);
        &thinned
    } else {
        pred
    };
    opts.thresholds
        .iter()
        .map(|&t| match_edges(&map.binarize(t), gts, opts.max_dist_fraction))
        .collect()
}

/// Trapezoidal area under precision against recall. Thresholds without any
/// predicted pixel have no defined precision and are left out; the curve is
/// extended flat to recall 0.
pub fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    if pts.is_empty() {
        return 0.0;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = pts[0].0 * pts[0].1;
    for win in pts.windows(2) {
        let ((r0, p0), (r1, p1)) = (win[0], win[1]);
        area += (r1 - r0) * (p0 + p1) / 2.0;
    }
    area.clamp(0.0, 1.0)
}

/// Summary from per-image, per-threshold counts (`counts[image][threshold]`).
pub fn summarize(counts: &[Vec<MatchCounts>], thresholds: &[f64]) -> Result<EvalSummary> {
    if counts.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    if thresholds.is_empty() || counts.iter().any(|c| c.len() != thresholds.len()) {
        return Err(Error::config("every image needs one count per threshold"));
    }
    let totals: Vec<MatchCounts> = (0..thresholds.len())
        .map(|k| counts.iter().fold(MatchCounts::default(), |acc, c| acc.merge(c[k])))
        .collect();
    let pr_table: Vec<PrRow> = totals
        .iter()
        .zip(thresholds)
        .map(|(c, &t)| PrRow {
            threshold: t,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
        })
        .collect();
    let (best_k, ods) = pr_table
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bk, bf), (k, r)| if r.f1 > bf { (k, r.f1) } else { (bk, bf) });
    let ois_counts = counts.iter().fold(MatchCounts::default(), |acc, per_t| {
        let best = per_t
            .iter()
            .copied()
            .fold(None::<MatchCounts>, |b, c| match b {
                Some(b) if b.f1() >= c.f1() => Some(b),
                _ => Some(c),
            })
            .unwrap_or_default();
        acc.merge(best)
    });
    let curve: Vec<(f64, f64)> = totals
        .iter()
        .filter(|c| c.tp + c.fp > 0)
        .map(|c| (c.recall(), c.precision()))
        .collect();
    Ok(EvalSummary {
        ods,
        ods_threshold: thresholds[best_k],
        ois: ois_counts.f1(),
        ap: average_precision(&curve),
        pr_table,
    })
}

pub fn evaluate(preds: &[EdgeMap], gts: &[GroundTruthSet], opts: &EvalOptions) -> Result<EvalSummary> {
    if preds.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    if preds.len() != gts.len() {
        return Err(Error::data(format!("{} predictions for {} ground truths", preds.len(), gts.len())));
    }
    if !(opts.max_dist_fraction >= 0.0) {
        return Err(Error::config("max_dist must be non-negative"));
    }
    let counts = preds
        .par_iter()
        .zip(gts)
        .map(|(p, g)| image_counts(p, g, opts))
        .collect::<Result<Vec<_>>>()?;
    summarize(&counts, &opts.thresholds)
}
