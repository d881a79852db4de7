use crate::error::{Error, Result};

/// Binary `h×w` map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMap {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMap {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(Error::shape(format!("binary map {h}x{w} with {} values", data.len())));
        }
        Ok(Self { h, w, data })
    }

    pub fn from_fn(h: usize, w: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Self { h, w, data }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn points(&self) -> Vec<(usize, usize)> {
        (0..self.h * self.w)
            .filter(|&i| self.data[i])
            .map(|i| (i / self.w, i % self.w))
            .collect()
    }
}

/// One or more annotator maps of the same image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthSet {
    maps: Vec<BinaryMap>,
}

impl GroundTruthSet {
    pub fn new(maps: Vec<BinaryMap>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::data("ground truth set without annotators"))?;
        let (h, w) = (first.h, first.w);
        if maps.iter().any(|m| (m.h, m.w) != (h, w)) {
            return Err(Error::shape("annotator maps differ in size"));
        }
        Ok(Self { maps })
    }

    pub fn single(map: BinaryMap) -> Self {
        Self { maps: vec![map] }
    }

    pub fn maps(&self) -> &[BinaryMap] {
        &self.maps
    }

    pub fn h(&self) -> usize {
        self.maps[0].h
    }

    pub fn w(&self) -> usize {
        self.maps[0].w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    /// Predicted pixels matched in at least one annotator map.
    pub tp: usize,
    pub fp: usize,
    /// Ground-truth pixels matched, summed over annotators.
    pub gt_hits: usize,
    /// Ground-truth pixels, summed over annotators.
    pub gt_total: usize,
}

impl MatchCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.gt_hits, self.gt_total)
    }

    pub fn f1(&self) -> f64 {
        f_measure(self.precision(), self.recall())
    }

    pub fn merge(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            gt_hits: self.gt_hits + o.gt_hits,
            gt_total: self.gt_total + o.gt_total,
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn f_measure(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Matching radius in pixels for a tolerance given as a fraction of the diagonal.
pub fn match_radius(h: usize, w: usize, max_dist_fraction: f64) -> f64 {
    max_dist_fraction * ((h * h + w * w) as f64).sqrt()
}

/// Maximum one-to-one matching between predicted and ground-truth pixels no
/// farther apart than `radius`. Returns, per predicted pixel, the index of its
/// partner in `gt`.
///
/// Pairs are first taken greedily nearest-first; augmenting paths then
/// raise the matching to maximum cardinality.
pub fn max_matching(pred: &[(usize, usize)], gt: &[(usize, usize)], h: usize, w: usize, radius: f64) -> Vec<Option<usize>> {
    let r2 = radius * radius;
    let reach = radius.floor() as isize;
    let mut gt_index = vec![usize::MAX; h * w];
    for (j, &(y, x)) in gt.iter().enumerate() {
        gt_index[y * w + x] = j;
    }
    // adjacency sorted nearest-first
    let adj: Vec<Vec<(u64, usize)>> = pred
        .iter()
        .map(|&(py, px)| {
            let mut v = Vec::new();
            for dy in -reach..=reach {
                let y = py as isize + dy;
                if y < 0 || y >= h as isize {
                    continue;
                }
                for dx in -reach..=reach {
                    let x = px as isize + dx;
                    if x < 0 || x >= w as isize {
                        continue;
                    }
                    let d2 = (dy * dy + dx * dx) as u64;
                    if d2 as f64 > r2 {
                        continue;
                    }
                    let j = gt_index[y as usize * w + x as usize];
                    if j != usize::MAX {
                        v.push((d2, j));
                    }
                }
            }
            v.sort_unstable();
            v
        })
        .collect();

    let mut pred_match: Vec<Option<usize>> = vec![None; pred.len()];
    let mut gt_match: Vec<Option<usize>> = vec![None; gt.len()];
    let mut pairs: Vec<(u64, usize, usize)> = adj
        .iter()
        .enumerate()
        .flat_map(|(i, v)| v.iter().map(move |&(d, j)| (d, i, j)))
        .collect();
    pairs.sort_unstable();
    for (_, i, j) in pairs {
        if pred_match[i].is_none() && gt_match[j].is_none() {
            pred_match[i] = Some(j);
            gt_match[j] = Some(i);
        }
    }

    let mut seen = vec![0usize; gt.len()];
    let mut stamp = 0usize;
    for root in 0..pred.len() {
        if pred_match[root].is_some() || adj[root].is_empty() {
            continue;
        }
        stamp += 1;
        if let Some(path) = augmenting_path(root, &adj, &gt_match, &mut seen, stamp) {
            for (i, j) in path {
                pred_match[i] = Some(j);
                gt_match[j] = Some(i);
            }
        }
    }
    pred_match
}

/// Iterative DFS for an alternating path from a free predicted pixel to a
/// free ground-truth pixel. Returns the pairs to assign along it.
fn augmenting_path(
    root: usize,
    adj: &[Vec<(u64, usize)>],
    gt_match: &[Option<usize>],
    seen: &mut [usize],
    stamp: usize,
) -> Option<Vec<(usize, usize)>> {
    // stack of (pred vertex, next adjacency slot, gt vertex used to reach it)
    let mut stack: Vec<(usize, usize, Option<usize>)> = vec![(root, 0, None)];
    while let Some(top) = stack.last_mut() {
        let (i, slot) = (top.0, top.1);
        if slot >= adj[i].len() {
            stack.pop();
            continue;
        }
        top.1 += 1;
        let j = adj[i][slot].1;
        if seen[j] == stamp {
            continue;
        }
        seen[j] = stamp;
        match gt_match[j] {
            None => {
                let mut path = vec![(i, j)];
                for k in (1..stack.len()).rev() {
                    let via = stack[k].2.expect("non-root frames record their gt vertex");
                    path.push((stack[k - 1].0, via));
                }
                return Some(path);
            }
            Some(next) => stack.push((next, 0, Some(j))),
        }
    }
    None
}

/// Correspondence counts of one binary prediction against every annotator.
pub fn match_edges(pred: &BinaryMap, gts: &GroundTruthSet, max_dist_fraction: f64) -> Result<MatchCounts> {
    if (pred.h, pred.w) != (gts.h(), gts.w()) {
        return Err(Error::shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.h,
            pred.w,
            gts.h(),
            gts.w()
        )));
    }
    let radius = match_radius(pred.h, pred.w, max_dist_fraction);
    let p = pred.points();
    let mut any = vec![false; p.len()];
    let mut counts = MatchCounts::default();
    for gt in &gts.maps {
        let g = gt.points();
        let m = max_matching(&p, &g, pred.h, pred.w, radius);
        for (hit, mi) in any.iter_mut().zip(&m) {
            if mi.is_some() {
                *hit = true;
                counts.gt_hits += 1;
            }
        }
        counts.gt_total += g.len();
    }
    counts.tp = any.iter().filter(|&&b| b).count();
    counts.fp = p.len() - counts.tp;
    Ok(counts)
}
