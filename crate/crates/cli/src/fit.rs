//! `fit-toy`: descends the total loss on free heatmap variables.
//!
//! The predictions themselves are the parameters, so a working loss and
//! gradient drive them onto the ground truth.

use std::fmt::Write as _;

use log::{debug, info};
use propnet::codec::{decode_to_input, BoundaryScheme, GridMapping, TieRule};
use propnet::loss::{focal_wing_loss_into, BatchAttributes, BatchMaps, LossBreakdown, LossParams};
use propnet::metrics::{nme, NormSpec};
use propnet::tensor::{HeatmapStack, Stack};

use crate::gen_gt::{render_sample, GenGtConfig};
use crate::{CliError, CliResult};

/// Ground truth for one toy run.
#[derive(Debug, Clone)]
pub struct ToySet {
    pub landmarks: Vec<HeatmapStack>,
    pub boundaries: Vec<HeatmapStack>,
    pub batch: BatchAttributes,
    /// Frame the heatmaps were rendered from.
    pub input_size: usize,
}

impl ToySet {
    /// Renders `n` synthetic faces drawn from `seed`.
    pub fn synthetic(n: usize, seed: u64, scheme: &BoundaryScheme) -> CliResult<Self> {
        if n == 0 {
            return Err(CliError::Input("synthetic set needs at least one sample".into()));
        }
        let cfg = GenGtConfig::default();
        let faces = propnet::synth::faces(seed, n);
        let mut landmarks = Vec::with_capacity(n);
        let mut boundaries = Vec::with_capacity(n);
        for f in &faces {
            let (lm, bd) = render_sample(f, scheme, &cfg)?;
            landmarks.push(lm);
            boundaries.push(bd);
        }
        let batch = BatchAttributes::from_attributes(faces.iter().map(|f| &f.attributes))?;
        Ok(ToySet { landmarks, boundaries, batch, input_size: cfg.input_size })
    }

    /// Loads a `gen-gt` output directory.
    pub fn from_dir(dir: &std::path::Path, input_size: usize) -> CliResult<Self> {
        let rows = crate::gen_gt::load(dir)?;
        let batch = BatchAttributes::from_attributes(rows.iter().map(|r| &r.0.attributes))?;
        let (landmarks, boundaries) = rows.into_iter().map(|(_, lm, bd)| (lm, bd)).unzip();
        Ok(ToySet { landmarks, boundaries, batch, input_size })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Constant(f64),
    GroundTruth,
}

#[derive(Debug, Clone, Copy)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
    pub init: Init,
    /// Stop once the total loss is below this fraction of its initial value
    /// and the decoded NME is below `stop_nme`.
    pub stop_ratio: Option<f64>,
    pub stop_nme: f64,
    /// Normalising distance, in input pixels, for the decoded NME.
    pub norm_distance: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            steps: 2000,
            lr: 1e-2,
            optimizer: Optimizer::Adam,
            init: Init::Constant(0.5),
            stop_ratio: None,
            stop_nme: 0.01,
            norm_distance: 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitLog {
    /// Loss before each update; the last entry is the loss after the final one.
    pub losses: Vec<LossBreakdown>,
    pub final_nme: f64,
    pub steps_run: usize,
}

impl FitLog {
    pub fn initial(&self) -> f64 {
        self.losses[0].total
    }

    pub fn last(&self) -> f64 {
        self.losses[self.losses.len() - 1].total
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("step\tlandmark\tboundary\ttotal\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{i}\t{:.9e}\t{:.9e}\t{:.9e}", l.landmark, l.boundary, l.total);
        }
        let _ = writeln!(out, "initial_loss\t{:.9e}", self.initial());
        let _ = writeln!(out, "final_loss\t{:.9e}", self.last());
        let _ = writeln!(out, "loss_ratio\t{:.9e}", if self.initial() > 0.0 { self.last() / self.initial() } else { 0.0 });
        let _ = writeln!(out, "final_nme\t{:.9e}", self.final_nme);
        out
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Moments {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Moments {
    fn new(stacks: &[HeatmapStack]) -> Self {
        let zeros: Vec<Vec<f64>> = stacks.iter().map(|s| vec![0.0; s.data().len()]).collect();
        Moments { m: zeros.clone(), v: zeros }
    }
}

fn update(params: &mut [HeatmapStack], grads: &[HeatmapStack], moments: &mut Moments, cfg: &FitConfig, t: usize) {
    match cfg.optimizer {
        Optimizer::Sgd => {
            for (p, g) in params.iter_mut().zip(grads) {
                for (x, d) in p.data_mut().iter_mut().zip(g.data()) {
                    *x -= cfg.lr * d;
                }
            }
        }
        Optimizer::Adam => {
            let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
            let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
            for (n, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let (m, v) = (&mut moments.m[n], &mut moments.v[n]);
                for (i, (x, &d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * d;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * d * d;
                    *x -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// Mean NME between landmarks decoded from `pred` and from `gt`, in input
/// pixels normalised by `distance`.
pub fn decoded_nme(gt: &[HeatmapStack], pred: &[HeatmapStack], input_size: usize, distance: f64) -> CliResult<f64> {
    let mut sum = 0.0;
    for (g, p) in gt.iter().zip(pred) {
        let (h, w) = g.dims();
        let mapping = GridMapping::new(input_size, h, w)?;
        let target = decode_to_input(g, &mapping, TieRule::default())?;
        let found = decode_to_input(p, &mapping, TieRule::default())?;
        sum += nme(&found, &target, &NormSpec::Fixed(distance))?;
    }
    Ok(sum / gt.len() as f64)
}

pub fn fit(set: &ToySet, p: &LossParams, cfg: &FitConfig) -> CliResult<FitLog> {
    p.validate()?;
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(CliError::Input(format!("learning rate {} must be positive", cfg.lr)));
    }
    let init = |gt: &[HeatmapStack]| -> Vec<HeatmapStack> {
        gt.iter()
            .map(|s| match cfg.init {
                Init::Constant(v) => {
                    let (c, h, w) = s.shape();
                    Stack::filled(c, h, w, v)
                }
                Init::GroundTruth => s.clone(),
            })
            .collect()
    };
    let mut lm = init(&set.landmarks);
    let mut bd = init(&set.boundaries);
    let mut g_lm = lm.clone();
    let mut g_bd = bd.clone();
    let mut m_lm = Moments::new(&lm);
    let mut m_bd = Moments::new(&bd);
    let gt = BatchMaps { landmarks: &set.landmarks, boundaries: &set.boundaries };

    let mut losses = Vec::with_capacity(cfg.steps + 1);
    let mut steps_run = 0;
    loop {
        let pred = BatchMaps { landmarks: &lm, boundaries: &bd };
        let loss = focal_wing_loss_into(gt, pred, &set.batch, p, &mut g_lm, &mut g_bd)?;
        debug!("step {steps_run}: total loss {:.9e}", loss.total);
        losses.push(loss);
        if steps_run == cfg.steps || loss.total == 0.0 {
            break;
        }
        if let Some(ratio) = cfg.stop_ratio {
            if steps_run % 10 == 0
                && loss.total < ratio * losses[0].total
                && decoded_nme(&set.landmarks, &lm, set.input_size, cfg.norm_distance)? < cfg.stop_nme
            {
                info!("stopping at step {steps_run}: targets reached");
                break;
            }
        }
        steps_run += 1;
        update(&mut lm, &g_lm, &mut m_lm, cfg, steps_run);
        update(&mut bd, &g_bd, &mut m_bd, cfg, steps_run);
    }
    let final_nme = decoded_nme(&set.landmarks, &lm, set.input_size, cfg.norm_distance)?;
    info!("ran {steps_run} steps, final total loss {:.6e}, decoded NME {final_nme:.6e}", losses[losses.len() - 1].total);
    Ok(FitLog { losses, final_nme, steps_run })
}
