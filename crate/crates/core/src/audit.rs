//! Parameter, MAC and throughput accounting.
//!
//! The headline MAC total counts convolutions only: `c_out·c_in·k²·ho·wo` for
//! standard and pointwise kernels, `c·k²·ho·wo` for depthwise ones. Norms,
//! activations, pooling, upsampling and adds are tallied as `other_ops`.

use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;

use crate::blocks::{build_block, block_param_count, BlockSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{FeatureShape, Layer, Mode, SeedRng};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditRow {
    pub name: String,
    pub kind: &'static str,
    pub params: usize,
    pub macs: u64,
    pub other_ops: u64,
    pub out_shape: FeatureShape,
}

impl AuditRow {
    /// Parameter-free op touching every output element once.
    pub fn elementwise(name: String, kind: &'static str, shape: FeatureShape) -> Self {
        Self {
            name,
            kind,
            params: 0,
            macs: 0,
            other_ops: (shape[0] * shape[1] * shape[2]) as u64,
            out_shape: shape,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuditReport {
    pub input: FeatureShape,
    pub rows: Vec<AuditRow>,
}

impl AuditReport {
    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    /// Headline figure: convolution MACs.
    pub fn total_macs(&self) -> u64 {
        self.rows.iter().map(|r| r.macs).sum()
    }

    pub fn total_other_ops(&self) -> u64 {
        self.rows.iter().map(|r| r.other_ops).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,kind,params,macs,other_ops,out_c,out_h,out_w\n");
        for r in &self.rows {
            let [c, h, w] = r.out_shape;
            let _ = writeln!(s, "{},{},{},{},{},{c},{h},{w}", r.name, r.kind, r.params, r.macs, r.other_ops);
        }
        let _ = writeln!(
            s,
            "total,,{},{},{},,,",
            self.total_params(),
            self.total_macs(),
            self.total_other_ops()
        );
        s
    }

    pub fn to_table(&self) -> String {
        let name_w = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(4).max(5);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<9}  {:>9}  {:>13}  {:>11}  {:>14}",
            "layer", "kind", "params", "macs", "other_ops", "output"
        );
        for r in &self.rows {
            let [c, h, w] = r.out_shape;
            let _ = writeln!(
                s,
                "{:<name_w$}  {:<9}  {:>9}  {:>13}  {:>11}  {:>14}",
                r.name,
                r.kind,
                r.params,
                r.macs,
                r.other_ops,
                format!("{c}x{h}x{w}")
            );
        }
        let _ = writeln!(
            s,
            "{:<name_w$}  {:<9}  {:>9}  {:>13}  {:>11}",
            "total",
            "",
            self.total_params(),
            self.total_macs(),
            self.total_other_ops()
        );
        let [_, h, w] = self.input;
        let macs = self.total_macs() as f64;
        let _ = writeln!(
            s,
            "input {h}x{w}: params {} ({:.1}k), MACs {:.3}G, 2xMACs {:.3}G",
            self.total_params(),
            self.total_params() as f64 / 1e3,
            macs / 1e9,
            2.0 * macs / 1e9
        );
        s
    }
}

/// Report for any layer given its input feature shape.
pub fn audit_layer<T: Scalar, L: Layer<T> + ?Sized>(layer: &L, input: FeatureShape) -> AuditReport {
    let mut rows = Vec::new();
    layer.audit("", input, &mut rows);
    AuditReport { input, rows }
}

pub fn count_macs<T: Scalar>(model: &Model<T>, h: usize, w: usize) -> Result<AuditReport> {
    if h < 4 || w < 4 {
        return Err(Error::config(format!("audit size {h}x{w}: both sides must be at least 4")));
    }
    Ok(audit_layer(model, [3, h, w]))
}

#[derive(Clone, Debug)]
pub struct FpsReport {
    pub fps: f64,
    pub seconds: f64,
    pub iters: usize,
    pub warmup: usize,
    pub h: usize,
    pub w: usize,
    pub threads: usize,
    pub machine: String,
}

impl std::fmt::Display for FpsReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:.2} FPS at {}x{} ({} iters after {} warmup, {:.3}s, {} threads, {})",
            self.fps, self.h, self.w, self.iters, self.warmup, self.seconds, self.threads, self.machine
        )
    }
}

/// CPU model, architecture and OS of the current host.
pub fn machine_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|m| m.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".into());
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{cpu}, {cores} logical cores, {}-{}",
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

/// Batch-1 end-to-end forwards on a fixed pseudo-random image.
pub fn bench_fps<T: Scalar>(model: &mut Model<T>, h: usize, w: usize, warmup: usize, iters: usize) -> Result<FpsReport> {
    if iters < 10 {
        return Err(Error::config(format!("bench needs at least 10 iterations, got {iters}")));
    }
    if h == 0 || w == 0 {
        return Err(Error::config("bench size must be positive"));
    }
    let mut rng = SeedRng::seed_from_u64(0);
    let image = Tensor::<T>::from_fn([1, 3, h, w], |_| T::from_f64_lossy(rand::Rng::random::<f64>(&mut rng)));
    for _ in 0..warmup {
        model.forward(&image, Mode::Eval)?;
    }
    let start = Instant::now();
    for _ in 0..iters {
        std::hint::black_box(model.forward(&image, Mode::Eval)?);
    }
    let seconds = start.elapsed().as_secs_f64();
    Ok(FpsReport {
        fps: iters as f64 / seconds.max(f64::MIN_POSITIVE),
        seconds,
        iters,
        warmup,
        h,
        w,
        threads: rayon::current_num_threads(),
        machine: machine_descriptor(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRow {
    pub kind: String,
    pub c_in: usize,
    pub c_mid: usize,
    pub c_out: usize,
    pub ns: usize,
    pub nd: usize,
    /// Convolution weights only.
    pub params: usize,
}

const BLOCK_ROWS: [(&str, usize, usize, usize); 8] = [
    ("rb1", 32, 32, 32),
    ("rb2", 32, 32, 32),
    ("lb", 32, 32, 32),
    ("pddp", 32, 32, 32),
    ("lb5x5", 32, 32, 32),
    ("rb1", 32, 32, 64),
    ("lb", 32, 32, 64),
    ("pddp", 32, 32, 64),
];

/// Conv-only parameter counts of the block variants at the reference widths.
pub fn block_report() -> Result<Vec<BlockRow>> {
    let mut rng = SeedRng::seed_from_u64(0);
    BLOCK_ROWS
        .iter()
        .map(|&(kind, c_in, c_mid, c_out)| {
            let spec = BlockSpec::of(kind, c_in, c_mid, c_out, false)?;
            let block = build_block::<f32>(&spec, false, &mut rng)?;
            Ok(BlockRow {
                kind: kind.to_string(),
                c_in,
                c_mid,
                c_out,
                ns: spec.ns,
                nd: spec.nd,
                params: block_param_count(&block, false),
            })
        })
        .collect()
}

pub fn block_table(rows: &[BlockRow]) -> String {
    let mut s = format!("{:<6}  {:>14}  {:>2}  {:>2}  {:>8}\n", "block", "channels", "Ns", "Nd", "params");
    for r in rows {
        let _ = writeln!(
            s,
            "{:<6}  {:>14}  {:>2}  {:>2}  {:>8}",
            r.kind,
            format!("{}->{}->{}", r.c_in, r.c_mid, r.c_out),
            r.ns,
            r.nd,
            r.params
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::nn::Conv;
    use crate::ops::ConvKind;

    #[test]
    fn pointwise_macs() {
        let conv = Conv::<f32>::zeros(ConvKind::Pointwise, 32, 64, 1, 1).unwrap();
        let r = audit_layer(&conv, [32, 10, 10]);
        assert_eq!(r.total_macs(), 204_800);
    }

    #[test]
    fn depthwise_macs() {
        let conv = Conv::<f32>::zeros(ConvKind::Depthwise, 8, 8, 3, 1).unwrap();
        assert_eq!(audit_layer(&conv, [8, 6, 5]).total_macs(), 8 * 9 * 30);
    }

    #[test]
    fn block_rows() {
        let rows = block_report().unwrap();
        let got: Vec<usize> = rows.iter().map(|r| r.params).collect();
        assert_eq!(got, [11264, 20480, 2336, 2624, 2848, 12288, 3360, 3648]);
        assert!(block_table(&rows).contains("32->32->64"));
    }

    #[test]
    fn totals_are_column_sums_and_match_model() {
        let m = Model::<f32>::build(&ModelConfig::default(), 0).unwrap();
        let r = count_macs(&m, 200, 200).unwrap();
        assert_eq!(r.total_params(), m.param_count());
        assert_eq!(r.total_macs(), r.rows.iter().map(|x| x.macs).sum::<u64>());
        assert!(r.to_csv().lines().count() == r.rows.len() + 2);
        assert!(count_macs(&m, 3, 200).is_err());
    }

    #[test]
    fn conv_macs_scale_with_area() {
        let m = Model::<f32>::build(&ModelConfig::preset("uhnet_m").unwrap(), 0).unwrap();
        let a = count_macs(&m, 16, 24).unwrap().total_macs();
        let b = count_macs(&m, 32, 48).unwrap().total_macs();
        assert_eq!(b, 4 * a);
    }
}
