//! Acceptance checks, one line per criterion. Runs as a plain binary so the
//! output stays in criterion order.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use uhnet_core::audit::{bench_fps, block_report, count_macs};
use uhnet_core::eval::{
    evaluate, match_edges, match_radius, nms_thin, BinaryMap, EdgeMap, EvalOptions, GroundTruthSet,
};
use uhnet_core::model::Checkpoint;
use uhnet_core::nn::{Layer, Mode, SeedRng};
use uhnet_core::synthetic::synthetic_dataset;
use uhnet_core::train::{dataset_loss, fit, AdamW, AugmentFlags, OptimizerState, TrainConfig};
use uhnet_core::{Model, ModelConfig, Tensor};

const PRESETS: [&str; 3] = ["uhnet", "uhnet_m", "uhnet_l"];

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn block_counts() -> Outcome {
    let expected = [
        ("rb1", 32, 11264),
        ("rb2", 32, 20480),
        ("lb", 32, 2336),
        ("pddp", 32, 2624),
        ("lb5x5", 32, 2848),
        ("rb1", 64, 12288),
        ("lb", 64, 3360),
        ("pddp", 64, 3648),
    ];
    let rows = block_report().map_err(|e| e.to_string())?;
    ensure(rows.len() == expected.len(), || format!("{} rows", rows.len()))?;
    let mut shown = Vec::new();
    for (row, (kind, c_out, params)) in rows.iter().zip(expected) {
        ensure(row.kind == kind && row.c_out == c_out && row.params == params, || {
            format!("{} 32->32->{} has {} params, expected {params}", row.kind, row.c_out, row.params)
        })?;
        shown.push(format!("{kind}/{c_out}={params}"));
    }
    Ok(shown.join(" "))
}

fn preset_totals() -> Outcome {
    let mut shown = Vec::new();
    let mut last = 0;
    for name in PRESETS {
        let m = Model::<f32>::build(&ModelConfig::preset(name).unwrap(), 0).map_err(|e| e.to_string())?;
        let ours = m.param_count();
        let reference = ModelConfig::reference_params(name).unwrap();
        let dev = (ours as f64 - reference) / reference;
        shown.push(format!("{name} {ours} vs {reference:.0} ({:+.1}%)", 100.0 * dev));
        ensure(dev.abs() <= 0.20, || format!("{name}: {ours} deviates {:+.1}%", 100.0 * dev))?;
        ensure(ours > last, || format!("{name} not larger than the previous preset"))?;
        last = ours;
    }
    Ok(shown.join(", "))
}

fn mac_audit() -> Outcome {
    let mut shown = Vec::new();
    let mut macs = Vec::new();
    for name in PRESETS {
        let m = Model::<f32>::build(&ModelConfig::preset(name).unwrap(), 0).map_err(|e| e.to_string())?;
        let total = count_macs(&m, 200, 200).map_err(|e| e.to_string())?.total_macs();
        shown.push(format!("{name} {:.3}G MACs ({:.3}G 2xMACs)", total as f64 / 1e9, 2.0 * total as f64 / 1e9));
        macs.push(total);
    }
    let g = macs[0] as f64 / 1e9;
    ensure((0.4..=1.0).contains(&g), || format!("uhnet {g:.3}G outside [0.4G, 1.0G]"))?;
    ensure(macs[0] < macs[1] && macs[1] < macs[2], || "MAC ordering broken".into())?;
    Ok(shown.join(", "))
}

fn gradients() -> Outcome {
    let mut worst = (String::new(), 0.0f64);
    for (name, rep) in common::suite::run() {
        ensure(rep.checked > 0, || format!("{name} checked nothing"))?;
        ensure(rep.max_rel_err < common::TOL, || format!("{name}: max rel err {:.3e}", rep.max_rel_err))?;
        if rep.max_rel_err >= worst.1 {
            worst = (name, rep.max_rel_err);
        }
    }
    Ok(format!("worst {} at {:.2e} < 1e-5", worst.0, worst.1))
}

fn overfit() -> Outcome {
    let data = synthetic_dataset(8, 64, 64, 0);
    let mut model = Model::<f32>::build(&ModelConfig::default(), 0).map_err(|e| e.to_string())?;
    let initial = dataset_loss(&mut model, &data, Mode::Train).map_err(|e| e.to_string())?;
    let mut opt = OptimizerState::new(AdamW { lr: 1e-3, ..AdamW::default() });
    let cfg = TrainConfig {
        epochs: 25,
        augment: AugmentFlags::none(),
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = fit(&mut model, &data, &cfg, &mut opt).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let last = dataset_loss(&mut model, &data, Mode::Train).map_err(|e| e.to_string())?;
    let ratio = last / initial;
    ensure(report.steps == 200, || format!("ran {} steps", report.steps))?;
    ensure(ratio <= 0.10, || format!("loss {initial:.4} -> {last:.4} ({:.1}%)", 100.0 * ratio))?;
    Ok(format!(
        "loss {initial:.4} -> {last:.4} ({:.1}% of initial) after {} steps in {secs:.1}s",
        100.0 * ratio,
        report.steps
    ))
}

fn points(m: &BinaryMap) -> Vec<(usize, usize)> {
    (0..m.h())
        .flat_map(|y| (0..m.w()).map(move |x| (y, x)))
        .filter(|&(y, x)| m.get(y, x))
        .collect()
}

fn oracle(pred: &[(usize, usize)], gt: &[(usize, usize)], r2: f64, i: usize, used: &mut [bool]) -> usize {
    if i == pred.len() {
        return 0;
    }
    let mut best = oracle(pred, gt, r2, i + 1, used);
    for j in 0..gt.len() {
        let (dy, dx) = (pred[i].0 as f64 - gt[j].0 as f64, pred[i].1 as f64 - gt[j].1 as f64);
        if !used[j] && dy * dy + dx * dx <= r2 {
            used[j] = true;
            best = best.max(1 + oracle(pred, gt, r2, i + 1, used));
            used[j] = false;
        }
    }
    best
}

fn random_map(h: usize, w: usize, density: f64, rng: &mut SeedRng) -> BinaryMap {
    BinaryMap::new(h, w, (0..h * w).map(|_| rng.random_bool(density)).collect()).unwrap()
}

/// `n` images whose predictions blend the first annotator's map with noise.
fn random_dataset(n: usize, rng: &mut SeedRng) -> (Vec<EdgeMap>, Vec<GroundTruthSet>) {
    let mut preds = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..n {
        let (h, w) = (rng.random_range(8..=16), rng.random_range(8..=16));
        let density = rng.random_range(0.05..0.25);
        let maps: Vec<BinaryMap> = (0..rng.random_range(1..=3)).map(|_| random_map(h, w, density, rng)).collect();
        let signal = rng.random_range(0.0..1.0f32);
        let data = (0..h * w)
            .map(|i| signal * maps[0].data()[i] as u8 as f32 + (1.0 - signal) * rng.random_range(0.0..1.0f32))
            .collect();
        preds.push(EdgeMap::new(h, w, data).unwrap());
        gts.push(GroundTruthSet::new(maps).unwrap());
    }
    (preds, gts)
}

/// One-pixel lines at least three pixels apart.
fn line_map(h: usize, w: usize, rng: &mut SeedRng) -> BinaryMap {
    let rows: Vec<usize> = (1..h - 1).step_by(3).filter(|_| rng.random_bool(0.5)).collect();
    let cols: Vec<usize> = (1..w - 1).step_by(3).filter(|_| rng.random_bool(0.5)).collect();
    BinaryMap::from_fn(h, w, |y, x| rows.contains(&y) || cols.contains(&x))
}

fn evaluator() -> Outcome {
    let mut rng = SeedRng::seed_from_u64(6);
    let instances = 2000;
    for k in 0..instances {
        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let density = rng.random_range(0.05..0.3);
        let (pred, gt) = (random_map(h, w, density, &mut rng), random_map(h, w, density, &mut rng));
        let fraction = [0.0, 1.0, 1.5, 2.0, 2.9][k % 5] / ((h * h + w * w) as f64).sqrt();
        let radius = match_radius(h, w, fraction);
        let c = match_edges(&pred, &GroundTruthSet::single(gt.clone()), fraction).map_err(|e| e.to_string())?;
        let gt_pts = points(&gt);
        let best = oracle(&points(&pred), &gt_pts, radius * radius, 0, &mut vec![false; gt_pts.len()]);
        ensure(c.tp == best && c.gt_hits == best, || {
            format!("instance {k}: matched {} but the optimum is {best}", c.tp)
        })?;
    }

    let gts: Vec<BinaryMap> = (0..3).map(|_| line_map(rng.random_range(8..24), rng.random_range(8..24), &mut rng)).collect();
    let preds: Vec<EdgeMap> = gts
        .iter()
        .map(|g| EdgeMap::new(g.h(), g.w(), g.data().iter().map(|&b| b as u8 as f32).collect()).unwrap())
        .collect();
    let sets: Vec<GroundTruthSet> = gts.into_iter().map(GroundTruthSet::single).collect();
    let s = evaluate(&preds, &sets, &EvalOptions::default()).map_err(|e| e.to_string())?;
    ensure(s.summary_line() == "ODS=1.000,OIS=1.000,AP=1.000", || format!("perfect predictions give {}", s.summary_line()))?;

    let trials = 200;
    let mut below = Vec::new();
    for t in 0..trials {
        let (preds, gts) = random_dataset(rng.random_range(3..=6), &mut rng);
        let opts = EvalOptions { thin: t % 2 == 0, ..EvalOptions::default() };
        let s = evaluate(&preds, &gts, &opts).map_err(|e| e.to_string())?;
        if s.ois < s.ods {
            below.push(format!("#{t} ODS {:.4} OIS {:.4}", s.ods, s.ois));
        }
    }
    let matched = format!("matching equals the exhaustive optimum on {instances} instances; perfect maps give {}", s.summary_line());
    ensure(below.is_empty(), || {
        format!(
            "{matched}; but OIS < ODS on {} of {trials} random datasets (e.g. {}): pooled per-image optima do not dominate",
            below.len(),
            below.iter().take(3).cloned().collect::<Vec<_>>().join(", ")
        )
    })?;
    Ok(format!("{matched}; OIS >= ODS on {trials} random datasets"))
}

fn nms() -> Outcome {
    // Vertical, horizontal and diagonal edges with a five-pixel profile.
    let profile = [0.1f32, 0.5, 1.0, 0.5, 0.1];
    let (h, w) = (13, 15);
    let ramps: [(&str, fn(isize, isize) -> isize); 3] = [
        ("vertical", |_, x| x - 7),
        ("horizontal", |y, _| y - 6),
        ("diagonal", |y, x| x - y - 1),
    ];
    for (name, dist) in ramps {
        let data = (0..h * w)
            .map(|i| {
                let d = dist((i / w) as isize, (i % w) as isize);
                if d.abs() <= 2 { profile[(d + 2) as usize] } else { 0.0 }
            })
            .collect();
        let thin = nms_thin(&EdgeMap::new(h, w, data).unwrap());
        for y in 0..h {
            for x in 0..w {
                let on = thin.get(y, x) > 0.0;
                let centre = dist(y as isize, x as isize) == 0;
                ensure(on == centre, || format!("{name} ramp: pixel ({y},{x}) survived={on}"))?;
            }
        }
    }
    let mut rng = SeedRng::seed_from_u64(7);
    let maps = 300;
    for _ in 0..maps {
        let (h, w) = (rng.random_range(1..20), rng.random_range(1..20));
        let map = EdgeMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0f32)).collect()).unwrap();
        let thin = nms_thin(&map);
        ensure(thin.data().iter().zip(map.data()).all(|(a, b)| a <= b), || "suppression raised a pixel".into())?;
    }
    Ok(format!(
        "vertical, horizontal and diagonal 5-px ramps thin to their 1-px centre lines; no pixel raised on {maps} random maps"
    ))
}

fn throughput() -> Outcome {
    let mut fps = Vec::new();
    let mut shown = Vec::new();
    let mut machine = String::new();
    for name in PRESETS {
        let mut m = Model::<f32>::build(&ModelConfig::preset(name).unwrap(), 0).map_err(|e| e.to_string())?;
        let r = bench_fps(&mut m, 200, 200, 2, 10).map_err(|e| e.to_string())?;
        shown.push(format!("{name} {:.1}", r.fps));
        fps.push(r.fps);
        machine = format!("{} threads, {}", r.threads, r.machine);
    }
    let detail = format!("FPS at 200x200: {} ({machine})", shown.join(", "));
    ensure(fps[0] > fps[1] && fps[1] > fps[2], || format!("ordering broken: {detail}"))?;
    Ok(detail)
}

fn checkpoints() -> Outcome {
    let cfg = ModelConfig::default();
    let mut model = Model::<f32>::build(&cfg, 9).map_err(|e| e.to_string())?;
    // Move the running statistics away from their initial values.
    let mut rng = SeedRng::seed_from_u64(9);
    let x = Tensor::<f32>::from_fn([1, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    model.forward(&x, Mode::Train).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("model.uhck");
    model.save(&path).map_err(|e| e.to_string())?;
    let loaded = Model::<f32>::load(&path, &cfg).map_err(|e| e.to_string())?;
    let state = |m: &Model<f32>| {
        m.named_state()
            .into_iter()
            .map(|(n, t)| (n, t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()))
            .collect::<Vec<_>>()
    };
    ensure(state(&model) == state(&loaded), || "reloaded state differs".into())?;
    let tensors = state(&model).len();

    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let mut cases: Vec<(String, Vec<u8>)> = Vec::new();
    for cut in [0, 3, 11, 40, bytes.len() / 2, bytes.len() - 1] {
        cases.push((format!("truncated to {cut} bytes"), bytes[..cut].to_vec()));
    }
    let mut bad_magic = bytes.clone();
    bad_magic[0] ^= 0xff;
    cases.push(("bad magic".into(), bad_magic));
    let mut bad_version = bytes.clone();
    bad_version[4] = 99;
    cases.push(("bad version".into(), bad_version));
    let mut trailing = bytes.clone();
    trailing.extend_from_slice(b"junk");
    cases.push(("trailing bytes".into(), trailing));
    for _ in 0..50 {
        let mut noisy = bytes.clone();
        for _ in 0..4 {
            let i = rng.random_range(0..noisy.len());
            noisy[i] = rng.random();
        }
        cases.push(("random corruption".into(), noisy));
    }
    let mut diagnosed = 0;
    for (what, data) in &cases {
        let p = dir.path().join("bad.uhck");
        std::fs::write(&p, data).map_err(|e| e.to_string())?;
        let outcome = catch_unwind(|| Model::<f32>::load(&p, &cfg).map(|_| ()));
        match outcome {
            Err(_) => return Err(format!("{what}: loader panicked")),
            Ok(Err(e)) => {
                ensure(!e.to_string().is_empty(), || format!("{what}: empty diagnostic"))?;
                diagnosed += 1;
            }
            // Corruption confined to payload floats still parses.
            Ok(Ok(())) => ensure(what == "random corruption", || format!("{what}: accepted"))?,
        }
    }
    let mismatch = Model::<f32>::load(&path, &ModelConfig::preset("uhnet_m").unwrap());
    let msg = mismatch.err().map(|e| e.to_string()).ok_or("loading into uhnet_m succeeded")?;
    ensure(Checkpoint::from_bytes(&bytes).is_ok(), || "pristine bytes rejected".into())?;
    Ok(format!(
        "{tensors} tensors bitwise equal after reload; {diagnosed} of {} corrupted files diagnosed without panics (the rest alter only finite payload values); config mismatch: {msg}",
        cases.len()
    ))
}

fn statement() -> Outcome {
    Ok("the published BSDS500/NYUD/BIPED F-scores (e.g. BSDS ODS .784) need the full datasets and \
        multi-hour training and are not reproduced here; criteria 1-9 verify the artifact through \
        parameter counting, MAC counting, gradient checks, a synthetic overfit run, evaluator oracles, \
        NMS properties, relative throughput and checkpoint round trips instead"
        .into())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("block parameter counts", block_counts),
        ("preset parameter totals", preset_totals),
        ("MAC audit at 200x200", mac_audit),
        ("gradient checks", gradients),
        ("overfit smoke train", overfit),
        ("evaluator oracles", evaluator),
        ("NMS thinning", nms),
        ("throughput ordering", throughput),
        ("checkpoint round trip", checkpoints),
        ("non-reproducibility statement", statement),
    ];
    let quiet: Box<dyn Fn(&std::panic::PanicHookInfo<'_>) + Send + Sync> = Box::new(|_| {});
    let default_hook = std::panic::take_hook();
    std::panic::set_hook(quiet);
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {}: PASS {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    std::panic::set_hook(default_hook);
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
