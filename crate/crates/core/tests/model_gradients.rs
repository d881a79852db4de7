mod common;

use common::{check_layer_smooth, suite::randomize_norms, EPS, TOL};
use rand::{Rng, SeedableRng};
use uhnet_core::nn::SeedRng;
use uhnet_core::{Model, ModelConfig, Tensor, Transition};

fn configs(norm: bool) -> Vec<(String, ModelConfig)> {
    let mut out = Vec::new();
    for (label, transition, skip) in [
        ("poolblock", Transition::PoolBlock, false),
        ("shortcut1x1", Transition::Shortcut1x1, false),
        ("fblock-on-skip", Transition::PoolBlock, true),
    ] {
        let mut cfg = ModelConfig::with_channels([2, 4, 4]);
        cfg.norm_enabled = norm;
        cfg.transition = transition;
        cfg.fblock_on_skip = skip;
        out.push((label.to_string(), cfg));
    }
    out
}

/// Largest share of coordinates allowed to straddle a kink.
const MAX_NONSMOOTH: f64 = 0.02;

fn run(norm: bool, sizes: &[(usize, usize)], eps: f64) {
    let mut rng = SeedRng::seed_from_u64(17);
    for (label, cfg) in configs(norm) {
        for &(h, w) in sizes {
            let mut model = Model::<f64>::build(&cfg, 3).unwrap();
            randomize_norms(&mut model, &mut rng);
            let x = Tensor::<f64>::from_fn([1, 3, h, w], |_| rng.random_range(0.0..1.0));
            let (rep, uncovered) = check_layer_smooth(&mut model, &x, 5, eps);
            println!(
                "{label} norm={norm} {h}x{w}: max rel err {:.3e} (analytic {:.6e}, numeric {:.6e}) over {}, {} non-smooth",
                rep.max_rel_err, rep.worst.0, rep.worst.1, rep.checked, rep.nonsmooth
            );
            assert!(rep.max_rel_err < TOL, "{label} norm={norm} {h}x{w}: {:.3e}", rep.max_rel_err);
            let frac = rep.nonsmooth as f64 / (rep.checked + rep.nonsmooth) as f64;
            assert!(frac <= MAX_NONSMOOTH, "{label} {h}x{w}: {:.1}% non-smooth", 100.0 * frac);
            assert!(uncovered.is_empty(), "{label} {h}x{w}: nothing compared in {uncovered:?}");
        }
    }
}

#[test]
fn whole_model_without_norms() {
    run(false, &[(4, 4), (7, 9), (8, 8)], EPS);
}

// Stage 3 needs more than one pixel, otherwise its batch statistics are a
// single value and the normalized output is constant. Batch statistics over
// a handful of pixels make the network strongly curved, so the step is
// smaller than for the norm-free model.
#[test]
fn whole_model_with_batch_norm() {
    run(true, &[(13, 18), (16, 16)], 1e-6);
}
