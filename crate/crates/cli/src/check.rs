//! Verification runs: `check-grad` and `check-shift`.

use std::fmt::Write as _;

use propnet::geometry::NUM_ATTRIBUTES;
use propnet::loss::{awing, awing_grad, total_loss, weighted_map_loss, weighted_map_loss_grad, BatchAttributes, LossParams};
use propnet::shift::{blur_downsample_padded, shift_consistency, subsample, BlurKernel, Padding};
use propnet::synth::lowpass_noise;
use propnet::tensor::{FeatureMap, HeatmapStack, Stack};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::CliResult;

/// Text for standard output plus the verification verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct Checked {
    pub text: String,
    pub failures: Vec<String>,
}

impl Checked {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub const FD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;
/// Pixels closer than this to their target are skipped: the loss has a cusp
/// at zero error where a central difference is meaningless.
pub const MIN_ERROR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    /// Negates every analytic gradient; the check must then fail.
    pub inject_sign_bug: bool,
    pub batch: usize,
    pub maps: usize,
    pub size: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { trials: 100, seed: 0, inject_sign_bug: false, batch: 3, maps: 4, size: 8 }
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_batch(rng: &mut ChaCha8Rng, cfg: &GradCheckConfig, channels: usize) -> (Vec<HeatmapStack>, Vec<HeatmapStack>) {
    let mut stacks = |lo: f64, hi: f64| -> Vec<HeatmapStack> {
        (0..cfg.batch).map(|_| Stack::from_fn(channels, cfg.size, cfg.size, |_, _, _| rng.gen_range(lo..hi))).collect()
    };
    let gt = stacks(0.0, 1.0);
    let pred = stacks(-0.25, 1.25);
    (gt, pred)
}

fn random_attributes(rng: &mut ChaCha8Rng, n: usize) -> BatchAttributes {
    let rows = (0..n)
        .map(|_| {
            let mut r = [false; NUM_ATTRIBUTES];
            for b in r.iter_mut() {
                *b = rng.gen_bool(0.4);
            }
            r
        })
        .collect();
    BatchAttributes::new(rows).expect("batch is non-empty")
}

/// Picks a pixel whose prediction error is at least [`MIN_ERROR`].
fn pick_pixel(rng: &mut ChaCha8Rng, gt: &[HeatmapStack], pred: &[HeatmapStack]) -> (usize, usize) {
    loop {
        let n = rng.gen_range(0..gt.len());
        let i = rng.gen_range(0..gt[n].data().len());
        if (gt[n].data()[i] - pred[n].data()[i]).abs() >= MIN_ERROR {
            return (n, i);
        }
    }
}

fn central_difference(pred: &mut [HeatmapStack], n: usize, i: usize, f: impl Fn(&[HeatmapStack]) -> f64) -> f64 {
    let orig = pred[n].data()[i];
    pred[n].data_mut()[i] = orig + FD_STEP;
    let plus = f(pred);
    pred[n].data_mut()[i] = orig - FD_STEP;
    let minus = f(pred);
    pred[n].data_mut()[i] = orig;
    (plus - minus) / (2.0 * FD_STEP)
}

/// Maximum relative gradient error for each loss.
pub fn grad_errors(p: &LossParams, cfg: &GradCheckConfig) -> CliResult<Vec<(&'static str, f64)>> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let sign = if cfg.inject_sign_bug { -1.0 } else { 1.0 };
    let mut rows = Vec::new();

    let mut worst = 0.0f64;
    for _ in 0..cfg.trials {
        let y: f64 = rng.gen_range(0.0..1.0);
        let y_hat = loop {
            let v: f64 = rng.gen_range(-0.5..1.5);
            if (v - y).abs() >= MIN_ERROR {
                break v;
            }
        };
        let numeric = (awing(y, y_hat + FD_STEP, p) - awing(y, y_hat - FD_STEP, p)) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(sign * awing_grad(y, y_hat, p), numeric));
    }
    rows.push(("awing", worst));

    for (name, channels) in [("landmark", cfg.maps), ("boundary", cfg.maps)] {
        let mut worst = 0.0f64;
        for _ in 0..cfg.trials {
            let (gt, mut pred) = random_batch(&mut rng, cfg, channels);
            let batch = random_attributes(&mut rng, cfg.batch);
            let grad = weighted_map_loss_grad(&gt, &pred, &batch, p)?;
            let (n, i) = pick_pixel(&mut rng, &gt, &pred);
            let numeric = central_difference(&mut pred, n, i, |q| weighted_map_loss(&gt, q, &batch, p).expect("shapes checked"));
            worst = worst.max(relative_error(sign * grad[n].data()[i], numeric));
        }
        rows.push((name, worst));
    }

    let mut worst = 0.0f64;
    for _ in 0..cfg.trials {
        let (gt_lm, mut lm) = random_batch(&mut rng, cfg, cfg.maps);
        let (gt_bd, mut bd) = random_batch(&mut rng, cfg, cfg.maps);
        let batch = random_attributes(&mut rng, cfg.batch);
        let on_boundary = rng.gen_bool(0.5);
        let (analytic, numeric) = if on_boundary {
            let l = weighted_map_loss(&gt_lm, &lm, &batch, p)?;
            let g = weighted_map_loss_grad(&gt_bd, &bd, &batch, p)?;
            let (n, i) = pick_pixel(&mut rng, &gt_bd, &bd);
            let num = central_difference(&mut bd, n, i, |q| total_loss(l, weighted_map_loss(&gt_bd, q, &batch, p).expect("shapes checked"), p));
            (p.beta * g[n].data()[i], num)
        } else {
            let b = weighted_map_loss(&gt_bd, &bd, &batch, p)?;
            let g = weighted_map_loss_grad(&gt_lm, &lm, &batch, p)?;
            let (n, i) = pick_pixel(&mut rng, &gt_lm, &lm);
            let num = central_difference(&mut lm, n, i, |q| total_loss(weighted_map_loss(&gt_lm, q, &batch, p).expect("shapes checked"), b, p));
            (g[n].data()[i], num)
        };
        worst = worst.max(relative_error(sign * analytic, numeric));
    }
    rows.push(("total", worst));
    Ok(rows)
}

pub fn check_grad(p: &LossParams, cfg: &GradCheckConfig) -> CliResult<Checked> {
    let rows = grad_errors(p, cfg)?;
    let mut text = String::from("loss\tmax_rel_error\tstatus\n");
    let mut failures = Vec::new();
    for (name, err) in rows {
        let ok = err <= GRAD_TOLERANCE;
        let _ = writeln!(text, "{name}\t{err:.3e}\t{}", if ok { "pass" } else { "FAIL" });
        if !ok {
            failures.push(format!("{name} gradient relative error {err:.3e} exceeds {GRAD_TOLERANCE:e}"));
        }
    }
    Ok(Checked { text, failures })
}

#[derive(Debug, Clone)]
pub struct ShiftCheckConfig {
    pub kernel_sizes: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub size: usize,
    pub max_shift: usize,
    /// Binomial smoothing passes applied to the uniform noise inputs.
    pub smoothing: usize,
}

impl Default for ShiftCheckConfig {
    fn default() -> Self {
        ShiftCheckConfig { kernel_sizes: vec![2, 3, 5], trials: 100, seed: 0, size: 64, max_shift: 3, smoothing: 1 }
    }
}

/// Zero-mean low-pass noise input for one trial.
pub fn noise_input(rng: &mut ChaCha8Rng, cfg: &ShiftCheckConfig) -> FeatureMap {
    let f = lowpass_noise(rng, 1, cfg.size, cfg.size, cfg.smoothing);
    let mean = f.data().iter().sum::<f64>() / f.data().len() as f64;
    f.map_values(|v| v - mean)
}

pub fn plain_score(f: &FeatureMap, max_shift: usize) -> CliResult<f64> {
    Ok(shift_consistency(|m: &FeatureMap| Ok(subsample(m, 2)), f, max_shift)?)
}

pub fn blur_score(f: &FeatureMap, n: usize, max_shift: usize) -> CliResult<f64> {
    let k = BlurKernel::new(n)?;
    Ok(shift_consistency(|m: &FeatureMap| blur_downsample_padded(m, &k, Padding::Circular), f, max_shift)?)
}

/// Per-trial scores: plain subsampling first, then one per kernel size.
pub fn shift_scores(cfg: &ShiftCheckConfig) -> CliResult<Vec<(f64, Vec<f64>)>> {
    for &n in &cfg.kernel_sizes {
        BlurKernel::new(n)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.trials);
    for _ in 0..cfg.trials {
        let f = noise_input(&mut rng, cfg);
        let plain = plain_score(&f, cfg.max_shift)?;
        let blurred = cfg.kernel_sizes.iter().map(|&n| blur_score(&f, n, cfg.max_shift)).collect::<CliResult<_>>()?;
        out.push((plain, blurred));
    }
    Ok(out)
}

/// Unit checkerboard whose top-left pixel is zero.
pub fn checkerboard(size: usize) -> FeatureMap {
    Stack::from_fn(1, size, size, |_, y, x| ((x + y + 1) % 2) as f64)
}

pub fn check_shift(cfg: &ShiftCheckConfig) -> CliResult<Checked> {
    let scores = shift_scores(cfg)?;
    let trials = scores.len().max(1) as f64;
    let plain_mean = scores.iter().map(|s| s.0).sum::<f64>() / trials;
    let mut text = String::from("method\tmean_score\twins_over_plain\n");
    let _ = writeln!(text, "plain\t{plain_mean:.6}\t-");
    let mut failures = Vec::new();
    for (j, &n) in cfg.kernel_sizes.iter().enumerate() {
        let mean = scores.iter().map(|s| s.1[j]).sum::<f64>() / trials;
        let wins = scores.iter().filter(|s| s.1[j] > s.0).count();
        let _ = writeln!(text, "blur-{n}\t{mean:.6}\t{wins}/{}", scores.len());
        if mean < plain_mean {
            failures.push(format!("blur-{n} mean score {mean} below plain {plain_mean}"));
        }
    }
    let board = checkerboard(cfg.size);
    let plain = plain_score(&board, cfg.max_shift)?;
    let _ = write!(text, "checkerboard\tplain={plain:.6}");
    for &n in &cfg.kernel_sizes {
        let s = blur_score(&board, n, cfg.max_shift)?;
        let _ = write!(text, "\tblur-{n}={s:.6}");
        if s < plain {
            failures.push(format!("checkerboard: blur-{n} score {s} below plain {plain}"));
        }
    }
    text.push('\n');
    Ok(Checked { text, failures })
}
