//! Adaptive Wing loss, batch focal factors and the Focal Wing objective.
//!
//! For a ground-truth pixel `y` and prediction `ŷ`, with `e = |y - ŷ|`:
//!
//! ```text
//! awing = ω ln(1 + (e/ε)^(α-y))   if e < θ
//!       = A e - Ω                 otherwise
//! A = ω (α-y) (θ/ε)^(α-y-1) / (1 + (θ/ε)^(α-y)) / ε
//! Ω = θ A - ω ln(1 + (θ/ε)^(α-y))
//! ```
//!
//! The objective weights each sample by the focal factors of the attribute
//! classes it belongs to:
//!
//! ```text
//! σ(c)  = N / Σ_n s_n(c)   (1 when no sample carries c)
//! w_n   = Σ_c s_n(c) σ(c)  (1 for samples without attributes)
//! L     = 1/N Σ_n w_n Σ_maps mean_pixels awing
//! total = L_landmark + β L_boundary
//! ```
//!
//! All reductions run sample-major, then map, then row-major pixel, so
//! results are bit-reproducible.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{Attributes, NUM_ATTRIBUTES};
use crate::tensor::{HeatmapStack, Stack};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub omega: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub theta: f64,
    pub beta: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { omega: 14.0, epsilon: 1.0, alpha: 2.1, theta: 0.5, beta: 0.5 }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.omega, self.epsilon, self.alpha, self.theta, self.beta].iter().all(|v| v.is_finite());
        if finite && self.omega > 0.0 && self.epsilon > 0.0 && self.theta > 0.0 && self.alpha > 1.0 && self.beta >= 0.0 {
            Ok(())
        } else {
            Err(Error::config(format!("invalid loss parameters {self:?}")))
        }
    }

    /// Reads `key = value` lines (`omega`, `epsilon`, `alpha`, `theta`,
    /// `beta`); keys not given keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = LossParams::default();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("loss params line {}: expected key=value", no + 1)))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("loss params line {}: bad number {:?}", no + 1, value.trim())))?;
            match key.trim() {
                "omega" => p.omega = value,
                "epsilon" => p.epsilon = value,
                "alpha" => p.alpha = value,
                "theta" => p.theta = value,
                "beta" => p.beta = value,
                other => return Err(Error::config(format!("unknown loss parameter {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_config(&self) -> String {
        format!(
            "omega = {}\nepsilon = {}\nalpha = {}\ntheta = {}\nbeta = {}\n",
            self.omega, self.epsilon, self.alpha, self.theta, self.beta
        )
    }

    /// Slope `A` and offset `Ω` of the linear branch for target `y`.
    pub fn linear_branch(&self, y: f64) -> (f64, f64) {
        let a = self.alpha - y;
        let r = self.theta / self.epsilon;
        let ra = r.powf(a);
        let slope = self.omega * a * r.powf(a - 1.0) / (1.0 + ra) / self.epsilon;
        let offset = self.theta * slope - self.omega * ra.ln_1p();
        (slope, offset)
    }
}

/// Loss value and its derivative with respect to the prediction.
#[inline]
pub fn awing_value_grad(y: f64, y_hat: f64, p: &LossParams) -> (f64, f64) {
    let diff = y_hat - y;
    let e = diff.abs();
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    if e < p.theta {
        if e == 0.0 {
            return (0.0, 0.0);
        }
        let a = p.alpha - y;
        let r = e / p.epsilon;
        let ra = r.powf(a);
        let value = p.omega * ra.ln_1p();
        let grad = p.omega * a * (ra / r) / (p.epsilon * (1.0 + ra));
        (value, sign * grad)
    } else {
        let (slope, offset) = p.linear_branch(y);
        (slope * e - offset, sign * slope)
    }
}

pub fn awing(y: f64, y_hat: f64, p: &LossParams) -> f64 {
    awing_value_grad(y, y_hat, p).0
}

pub fn awing_grad(y: f64, y_hat: f64, p: &LossParams) -> f64 {
    awing_value_grad(y, y_hat, p).1
}

/// Binary attribute matrix of one batch (`N × 6`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchAttributes {
    rows: Vec<[bool; NUM_ATTRIBUTES]>,
}

impl BatchAttributes {
    pub fn new(rows: Vec<[bool; NUM_ATTRIBUTES]>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::invalid("a batch needs at least one sample"));
        }
        Ok(BatchAttributes { rows })
    }

    pub fn from_attributes<'a>(attrs: impl IntoIterator<Item = &'a Attributes>) -> Result<Self> {
        Self::new(attrs.into_iter().map(|a| a.0).collect())
    }

    /// A batch of `n` samples with no attributes set.
    pub fn plain(n: usize) -> Result<Self> {
        Self::new(vec![[false; NUM_ATTRIBUTES]; n])
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, n: usize) -> &[bool; NUM_ATTRIBUTES] {
        &self.rows[n]
    }

    pub fn class_count(&self, c: usize) -> usize {
        self.rows.iter().filter(|r| r[c]).count()
    }

    /// The focal factor as an exact `(numerator, denominator)` pair.
    pub fn focal_ratio(&self, c: usize) -> (usize, usize) {
        assert!(c < NUM_ATTRIBUTES, "class index {c} out of range");
        match self.class_count(c) {
            0 => (1, 1),
            k => (self.rows.len(), k),
        }
    }

    /// `N / count(c)`, or 1 when class `c` is absent from the batch.
    pub fn focal_factor(&self, c: usize) -> f64 {
        let (num, den) = self.focal_ratio(c);
        num as f64 / den as f64
    }

    /// Sum of the focal factors of the classes sample `n` belongs to; 1 for
    /// samples without any attribute.
    pub fn sample_weight(&self, n: usize) -> f64 {
        let row = &self.rows[n];
        if row.iter().all(|f| !f) {
            return 1.0;
        }
        (0..NUM_ATTRIBUTES).filter(|&c| row[c]).map(|c| self.focal_factor(c)).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.rows.len()).map(|n| self.sample_weight(n)).collect()
    }
}

fn check_shapes(gt: &[HeatmapStack], pred: &[HeatmapStack], batch: &BatchAttributes) -> Result<()> {
    if gt.len() != pred.len() || gt.len() != batch.len() {
        return Err(Error::invalid(format!(
            "batch size mismatch: {} targets, {} predictions, {} attribute rows",
            gt.len(),
            pred.len(),
            batch.len()
        )));
    }
    for (n, (g, p)) in gt.iter().zip(pred).enumerate() {
        if g.shape() != p.shape() {
            return Err(Error::invalid(format!(
                "sample {n}: target shape {:?} differs from prediction shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if g.plane_len() == 0 && g.channels() > 0 {
            return Err(Error::invalid(format!("sample {n}: empty maps")));
        }
    }
    Ok(())
}

/// Weighted AWing over a batch of map stacks: `1/N Σ_n w_n Σ_k mean(awing)`.
pub fn weighted_map_loss(gt: &[HeatmapStack], pred: &[HeatmapStack], batch: &BatchAttributes, p: &LossParams) -> Result<f64> {
    check_shapes(gt, pred, batch)?;
    let mut total = 0.0;
    for (n, (g, q)) in gt.iter().zip(pred).enumerate() {
        let mut per_sample = 0.0;
        for k in 0..g.channels() {
            let s: f64 = g.map(k).iter().zip(q.map(k)).map(|(&y, &yh)| awing(y, yh, p)).sum();
            per_sample += s / g.plane_len() as f64;
        }
        total += batch.sample_weight(n) * per_sample;
    }
    Ok(total / gt.len() as f64)
}

/// Gradient of [`weighted_map_loss`] with respect to the predictions.
pub fn weighted_map_loss_grad(gt: &[HeatmapStack], pred: &[HeatmapStack], batch: &BatchAttributes, p: &LossParams) -> Result<Vec<HeatmapStack>> {
    check_shapes(gt, pred, batch)?;
    let n_samples = gt.len() as f64;
    Ok(gt
        .iter()
        .zip(pred)
        .enumerate()
        .map(|(n, (g, q))| {
            let scale = batch.sample_weight(n) / (n_samples * g.plane_len() as f64);
            let data = g.data().iter().zip(q.data()).map(|(&y, &yh)| scale * awing_grad(y, yh, p)).collect();
            let (c, h, w) = g.shape();
            Stack::from_vec(c, h, w, data).expect("shape preserved")
        })
        .collect())
}

/// [`weighted_map_loss`] and its gradient in one pass; the gradient is
/// scaled by `grad_scale` and written into `grad`, which must match `pred`.
pub fn weighted_map_loss_into(
    gt: &[HeatmapStack],
    pred: &[HeatmapStack],
    batch: &BatchAttributes,
    p: &LossParams,
    grad_scale: f64,
    grad: &mut [HeatmapStack],
) -> Result<f64> {
    check_shapes(gt, pred, batch)?;
    if grad.len() != pred.len() || grad.iter().zip(pred).any(|(g, q)| g.shape() != q.shape()) {
        return Err(Error::invalid("gradient buffers do not match the predictions"));
    }
    let n_samples = gt.len() as f64;
    let mut total = 0.0;
    for (n, ((g, q), out)) in gt.iter().zip(pred).zip(grad.iter_mut()).enumerate() {
        let weight = batch.sample_weight(n);
        let pixels = g.plane_len();
        let scale = grad_scale * weight / (n_samples * pixels as f64);
        let mut per_sample = 0.0;
        for k in 0..g.channels() {
            let mut s = 0.0;
            for ((&y, &yh), d) in g.map(k).iter().zip(q.map(k)).zip(out.map_mut(k)) {
                let (v, dv) = awing_value_grad(y, yh, p);
                s += v;
                *d = scale * dv;
            }
            per_sample += s / pixels as f64;
        }
        total += weight * per_sample;
    }
    Ok(total / n_samples)
}

/// Landmark heatmap loss.
pub fn landmark_loss(gt: &[HeatmapStack], pred: &[HeatmapStack], batch: &BatchAttributes, p: &LossParams) -> Result<f64> {
    weighted_map_loss(gt, pred, batch, p)
}

/// Boundary heatmap loss.
pub fn boundary_loss(gt: &[HeatmapStack], pred: &[HeatmapStack], batch: &BatchAttributes, p: &LossParams) -> Result<f64> {
    weighted_map_loss(gt, pred, batch, p)
}

pub fn total_loss(landmark: f64, boundary: f64, p: &LossParams) -> f64 {
    landmark + p.beta * boundary
}

/// Ground truth and predictions for one batch, landmark and boundary stacks
/// side by side.
#[derive(Debug, Clone, Copy)]
pub struct BatchMaps<'a> {
    pub landmarks: &'a [HeatmapStack],
    pub boundaries: &'a [HeatmapStack],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub landmark: f64,
    pub boundary: f64,
    pub total: f64,
}

pub fn focal_wing_loss(gt: BatchMaps<'_>, pred: BatchMaps<'_>, batch: &BatchAttributes, p: &LossParams) -> Result<LossBreakdown> {
    let landmark = landmark_loss(gt.landmarks, pred.landmarks, batch, p)?;
    let boundary = boundary_loss(gt.boundaries, pred.boundaries, batch, p)?;
    Ok(LossBreakdown { landmark, boundary, total: total_loss(landmark, boundary, p) })
}

/// Gradients of the total loss with respect to the landmark and boundary
/// predictions.
pub fn total_loss_grad(gt: BatchMaps<'_>, pred: BatchMaps<'_>, batch: &BatchAttributes, p: &LossParams) -> Result<(Vec<HeatmapStack>, Vec<HeatmapStack>)> {
    let lm = weighted_map_loss_grad(gt.landmarks, pred.landmarks, batch, p)?;
    let bd = weighted_map_loss_grad(gt.boundaries, pred.boundaries, batch, p)?
        .into_iter()
        .map(|s| s.map_values(|v| p.beta * v))
        .collect();
    Ok((lm, bd))
}

/// Loss breakdown plus gradients, written into caller-owned buffers.
pub fn focal_wing_loss_into(
    gt: BatchMaps<'_>,
    pred: BatchMaps<'_>,
    batch: &BatchAttributes,
    p: &LossParams,
    landmark_grad: &mut [HeatmapStack],
    boundary_grad: &mut [HeatmapStack],
) -> Result<LossBreakdown> {
    let landmark = weighted_map_loss_into(gt.landmarks, pred.landmarks, batch, p, 1.0, landmark_grad)?;
    let boundary = weighted_map_loss_into(gt.boundaries, pred.boundaries, batch, p, p.beta, boundary_grad)?;
    Ok(LossBreakdown { landmark, boundary, total: total_loss(landmark, boundary, p) })
}

#[cfg(test)]
mod tests {
    use super::*;

    const P: LossParams = LossParams { omega: 14.0, epsilon: 1.0, alpha: 2.1, theta: 0.5, beta: 0.5 };

    #[test]
    fn zero_error_is_zero() {
        for y in [0.0, 0.3, 1.0] {
            assert_eq!(awing(y, y, &P), 0.0);
            assert_eq!(awing_grad(y, y, &P), 0.0);
        }
    }

    #[test]
    fn branches_meet_at_theta() {
        let log_branch = 14.0 * (1.0 + 0.5f64.powf(2.1)).ln();
        let (a, omega_c) = P.linear_branch(0.0);
        let lin_branch = a * 0.5 - omega_c;
        assert!((log_branch - lin_branch).abs() < 1e-12);
        assert!((awing(0.0, 0.5, &P) - log_branch).abs() < 1e-12);
    }

    #[test]
    fn larger_target_steepens_small_errors() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=20 {
            let y = i as f64 / 20.0;
            let v = awing(y, y + 0.4, &P);
            assert!(v > prev, "y={y}");
            prev = v;
        }
        assert!(awing(1.0, 0.6, &P) > awing(0.0, 0.4, &P));
    }

    #[test]
    fn linear_branch_has_constant_slope() {
        let (a, _) = P.linear_branch(0.2);
        assert_eq!(awing_grad(0.2, 0.9, &P), a);
        assert_eq!(awing_grad(0.2, 1.7, &P), a);
        assert_eq!(awing_grad(0.2, -0.5, &P), -a);
    }

    #[test]
    fn slope_is_continuous_at_knot() {
        for y in [0.0, 0.5, 1.0] {
            let (a, _) = P.linear_branch(y);
            let inner = awing_grad(y, y + P.theta - 1e-12, &P);
            assert!((inner - a).abs() / a < 1e-9);
        }
    }

    #[test]
    fn focal_factors() {
        let mut rows = vec![[false; 6]; 4];
        rows[1][2] = true;
        let b = BatchAttributes::new(rows).unwrap();
        assert_eq!(b.focal_factor(2), 4.0);
        assert_eq!(b.focal_factor(0), 1.0);
        let all = BatchAttributes::new(vec![[true; 6]; 3]).unwrap();
        assert_eq!(all.focal_factor(5), 1.0);
    }

    #[test]
    fn sample_weights() {
        let mut rows = vec![[false; 6]; 4];
        rows[0][0] = true;
        rows[0][3] = true;
        let b = BatchAttributes::new(rows).unwrap();
        assert_eq!(b.sample_weight(0), 8.0);
        assert_eq!(b.sample_weight(1), 1.0);
        let mut shared = [false; 6];
        shared[4] = true;
        let same = BatchAttributes::new(vec![shared; 5]).unwrap();
        assert!(same.weights().iter().all(|&w| w == 1.0));
        assert!(BatchAttributes::new(vec![]).is_err());
    }

    #[test]
    fn uniform_single_map_collapses_to_scalar() {
        let gt = vec![Stack::zeros(1, 4, 4)];
        let pred = vec![Stack::filled(1, 4, 4, 0.1)];
        let b = BatchAttributes::plain(1).unwrap();
        let l = landmark_loss(&gt, &pred, &b, &P).unwrap();
        assert!((l - awing(0.0, 0.1, &P)).abs() < 1e-15);
        assert_eq!(landmark_loss(&gt, &gt, &b, &P).unwrap(), 0.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let b = BatchAttributes::plain(1).unwrap();
        let r = landmark_loss(&[Stack::zeros(1, 4, 4)], &[Stack::zeros(2, 4, 4)], &b, &P);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
        let r = landmark_loss(&[Stack::zeros(1, 4, 4)], &[Stack::zeros(1, 4, 4)], &BatchAttributes::plain(2).unwrap(), &P);
        assert!(r.is_err());
    }

    #[test]
    fn total_loss_arithmetic() {
        assert_eq!(total_loss(2.0, 4.0, &P), 4.0);
        assert_eq!(total_loss(2.0, 4.0, &LossParams { beta: 0.0, ..P }), 2.0);
    }

    #[test]
    fn params_config_roundtrip() {
        let p = LossParams::parse("alpha = 2.5\n# comment\nbeta=0.25\n").unwrap();
        assert_eq!(p.alpha, 2.5);
        assert_eq!(p.beta, 0.25);
        assert_eq!(p.omega, 14.0);
        assert_eq!(LossParams::parse(&p.to_config()).unwrap(), p);
        assert!(LossParams::parse("alpha = 0.9").is_err());
        assert!(LossParams::parse("gamma = 1").is_err());
        assert!(LossParams::parse("omega 3").is_err());
    }
}
