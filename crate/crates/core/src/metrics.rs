//! Normalised mean error, failure rate, AUC and cumulative error
//! distribution.
//!
//! The failure rate at threshold `t` counts samples with NME strictly
//! greater than `t`, so `FR(t) = 1 - CED(t)`. AUC integrates the CED step
//! function exactly over `[0, t]` and divides by `t`.

use std::fmt::Write as _;

use log::warn;

use crate::error::{Error, Result};
use crate::geometry::{Attribute, LandmarkSet, Point, NUM_ATTRIBUTES};
use crate::loss::BatchAttributes;

/// How the per-sample normalisation distance is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum NormSpec {
    /// Distance between two landmarks, usually the outer eye corners.
    InterOcular(usize, usize),
    /// Distance between the centroids of two landmark sets (pupil centres).
    InterPupil(Vec<usize>, Vec<usize>),
    /// Explicit distance.
    Fixed(f64),
}

const PRESETS: &str = include_str!("../data/norm_presets.txt");

impl NormSpec {
    /// Parses `interocular:A,B`, `interpupil:i,j,../k,l,..`, `fixed:D` or a
    /// preset name (`wflw98`, `ibug68`, `cofw29`).
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        if let Some(preset) = preset_line(spec) {
            return Self::parse(preset);
        }
        let (mode, args) = spec
            .split_once(':')
            .ok_or_else(|| Error::config(format!("unknown normalisation {spec:?}")))?;
        let indices = |s: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| Error::config(format!("bad landmark index {t:?}"))))
                .collect()
        };
        match mode {
            "interocular" => match indices(args)?[..] {
                [a, b] => Ok(NormSpec::InterOcular(a, b)),
                _ => Err(Error::config("interocular takes exactly two indices")),
            },
            "interpupil" => {
                let (l, r) = args
                    .split_once('/')
                    .ok_or_else(|| Error::config("interpupil takes two index sets separated by '/'"))?;
                let (l, r) = (indices(l)?, indices(r)?);
                if l.is_empty() || r.is_empty() {
                    return Err(Error::config("interpupil index sets must be non-empty"));
                }
                Ok(NormSpec::InterPupil(l, r))
            }
            "fixed" => {
                let d: f64 = args.trim().parse().map_err(|_| Error::config(format!("bad distance {args:?}")))?;
                if d > 0.0 && d.is_finite() {
                    Ok(NormSpec::Fixed(d))
                } else {
                    Err(Error::config("fixed normalisation distance must be positive"))
                }
            }
            _ => Err(Error::config(format!("unknown normalisation mode {mode:?}"))),
        }
    }

    pub fn max_index(&self) -> Option<usize> {
        match self {
            NormSpec::InterOcular(a, b) => Some(*a.max(b)),
            NormSpec::InterPupil(l, r) => l.iter().chain(r).copied().max(),
            NormSpec::Fixed(_) => None,
        }
    }

    /// Normalisation distance taken from the ground-truth landmarks.
    pub fn distance(&self, gt: &[Point]) -> Result<f64> {
        if let Some(max) = self.max_index() {
            if max >= gt.len() {
                return Err(Error::config(format!(
                    "normalisation uses landmark {max}, sample has {}",
                    gt.len()
                )));
            }
        }
        let centroid = |idx: &[usize]| {
            let n = idx.len() as f64;
            let (sx, sy) = idx.iter().fold((0.0, 0.0), |(sx, sy), &i| (sx + gt[i].x, sy + gt[i].y));
            Point::new(sx / n, sy / n)
        };
        Ok(match self {
            NormSpec::InterOcular(a, b) => gt[*a].distance(gt[*b]),
            NormSpec::InterPupil(l, r) => centroid(l).distance(centroid(r)),
            NormSpec::Fixed(d) => *d,
        })
    }
}

fn preset_line(name: &str) -> Option<&'static str> {
    PRESETS
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .find_map(|l| {
            let (n, spec) = l.split_once(char::is_whitespace)?;
            (n == name).then(|| spec.trim())
        })
}

/// Mean point-to-point error divided by the normalisation distance.
pub fn nme(pred: &[Point], gt: &[Point], norm: &NormSpec) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::invalid(format!(
            "prediction has {} landmarks, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    let d = norm.distance(gt)?;
    if !(d > 0.0 && d.is_finite()) {
        return Err(Error::Degenerate(format!("normalisation distance is {d}")));
    }
    let sum: f64 = pred.iter().zip(gt).map(|(p, g)| p.distance(*g)).sum();
    Ok(sum / gt.len() as f64 / d)
}

fn check_threshold(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("threshold {t} must be positive")))
    }
}

/// Fraction of samples with NME `<= e`.
pub fn ced_at(nmes: &[f64], e: f64) -> f64 {
    if nmes.is_empty() {
        return 0.0;
    }
    nmes.iter().filter(|&&v| v <= e).count() as f64 / nmes.len() as f64
}

/// Fraction of samples with NME strictly above `threshold`.
pub fn failure_rate(nmes: &[f64], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if nmes.is_empty() {
        return Err(Error::invalid("failure rate of an empty set"));
    }
    Ok(1.0 - ced_at(nmes, threshold))
}

/// Exact area under the CED step function on `[0, threshold]`, divided by
/// `threshold`.
pub fn auc(nmes: &[f64], threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    if nmes.is_empty() {
        return Err(Error::invalid("AUC of an empty set"));
    }
    // each sample contributes (t - e) / t of width under the curve
    let area: f64 = nmes.iter().map(|&e| (threshold - e.max(0.0)).max(0.0)).sum();
    Ok((area / (nmes.len() as f64 * threshold)).clamp(0.0, 1.0))
}

/// Exact CED steps: one `(error, fraction <= error)` point per distinct
/// error, ascending, ending at fraction 1.
pub fn ced_steps(nmes: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = nmes.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &e) in sorted.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == e => last.1 = frac,
            _ => out.push((e, frac)),
        }
    }
    out
}

/// `resolution + 1` evenly spaced CED samples on `[0, threshold]`, for plots.
pub fn ced_curve(nmes: &[f64], threshold: f64, resolution: usize) -> Vec<(f64, f64)> {
    let steps = resolution.max(1);
    (0..=steps)
        .map(|j| {
            let e = threshold * j as f64 / steps as f64;
            (e, ced_at(nmes, e))
        })
        .collect()
}

/// AUC and plot points together.
pub fn auc_ced(nmes: &[f64], threshold: f64, resolution: usize) -> Result<(f64, Vec<(f64, f64)>)> {
    Ok((auc(nmes, threshold)?, ced_curve(nmes, threshold, resolution)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdStats {
    pub threshold: f64,
    pub failure_rate: f64,
    pub auc: f64,
}

/// Aggregates over one set of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    /// Indices (into the evaluated set) of the samples summarised.
    pub samples: Vec<usize>,
    pub per_sample_nme: Vec<f64>,
    pub nme_mean: f64,
    pub thresholds: Vec<ThresholdStats>,
    pub ced: Vec<(f64, f64)>,
}

impl Summary {
    fn from_nmes(samples: Vec<usize>, nmes: Vec<f64>, thresholds: &[f64]) -> Result<Self> {
        let nme_mean = nmes.iter().sum::<f64>() / nmes.len() as f64;
        let thresholds = thresholds
            .iter()
            .map(|&t| Ok(ThresholdStats { threshold: t, failure_rate: failure_rate(&nmes, t)?, auc: auc(&nmes, t)? }))
            .collect::<Result<_>>()?;
        let ced = ced_steps(&nmes);
        Ok(Summary { samples, per_sample_nme: nmes, nme_mean, thresholds, ced })
    }

    fn write_tsv(&self, prefix: &str, out: &mut String) {
        let _ = writeln!(out, "{prefix}samples\t{}", self.samples.len());
        let _ = writeln!(out, "{prefix}nme\t{}", self.nme_mean);
        for t in &self.thresholds {
            let _ = writeln!(out, "{prefix}fr@{}\t{}", t.threshold, t.failure_rate);
            let _ = writeln!(out, "{prefix}auc@{}\t{}", t.threshold, t.auc);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Summary,
    /// One entry per attribute class; `None` when no evaluated sample
    /// carries the attribute.
    pub subsets: Vec<(Attribute, Option<Summary>)>,
    /// Samples dropped because their normalisation distance was degenerate.
    pub excluded: Vec<usize>,
}

impl EvalReport {
    /// `name<TAB>value` lines; absent subsets print `absent`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        self.overall.write_tsv("", &mut out);
        let _ = writeln!(out, "excluded\t{}", self.excluded.len());
        for (attr, sub) in &self.subsets {
            match sub {
                Some(s) => s.write_tsv(&format!("{}.", attr.name()), &mut out),
                None => {
                    let _ = writeln!(out, "{}.samples\tabsent", attr.name());
                }
            }
        }
        out
    }
}

/// Two-column `error fraction` text for external plotting.
pub fn ced_text(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (e, f) in points {
        let _ = writeln!(out, "{e}\t{f}");
    }
    out
}

/// Evaluates predictions against ground truth, overall and per attribute
/// subset. Samples with a degenerate normalisation distance are excluded
/// with a warning.
pub fn evaluate(preds: &[Vec<Point>], gts: &[LandmarkSet], norm: &NormSpec, thresholds: &[f64], subsets: &BatchAttributes) -> Result<EvalReport> {
    if preds.len() != gts.len() || subsets.len() != gts.len() {
        return Err(Error::invalid(format!(
            "record count mismatch: {} predictions, {} ground-truth samples, {} attribute rows",
            preds.len(),
            gts.len(),
            subsets.len()
        )));
    }
    for &t in thresholds {
        check_threshold(t)?;
    }
    let mut kept = Vec::new();
    let mut nmes = Vec::new();
    let mut excluded = Vec::new();
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        match nme(p, &g.points, norm) {
            Ok(v) => {
                kept.push(i);
                nmes.push(v);
            }
            Err(Error::Degenerate(why)) => {
                warn!("excluding sample {i} ({}): {why}", g.image_id);
                excluded.push(i);
            }
            Err(e) => return Err(Error::invalid(format!("sample {i}: {e}"))),
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("no sample could be evaluated"));
    }
    let mut subs = Vec::with_capacity(NUM_ATTRIBUTES);
    for attr in Attribute::ALL {
        let (idx, vals): (Vec<usize>, Vec<f64>) = kept
            .iter()
            .zip(&nmes)
            .filter(|(&i, _)| subsets.row(i)[attr.index()])
            .map(|(&i, &v)| (i, v))
            .unzip();
        let summary = if idx.is_empty() { None } else { Some(Summary::from_nmes(idx, vals, thresholds)?) };
        subs.push((attr, summary));
    }
    Ok(EvalReport { overall: Summary::from_nmes(kept, nmes, thresholds)?, subsets: subs, excluded })
}
