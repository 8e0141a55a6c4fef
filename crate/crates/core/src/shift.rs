//! Anti-aliased downsampling, coordinate channels and shift-consistency
//! measurement.

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Stack};

/// Binomial low-pass kernel of size 2, 3 or 5.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurKernel {
    taps: Vec<f64>,
}

impl BlurKernel {
    pub fn new(size: usize) -> Result<Self> {
        let taps: &[f64] = match size {
            2 => &[1.0, 1.0],
            3 => &[1.0, 2.0, 1.0],
            5 => &[1.0, 4.0, 6.0, 4.0, 1.0],
            _ => return Err(Error::invalid(format!("unsupported blur kernel size {size}; use 2, 3 or 5"))),
        };
        let sum: f64 = taps.iter().sum();
        Ok(BlurKernel { taps: taps.iter().map(|t| t / sum).collect() })
    }

    pub fn size(&self) -> usize {
        self.taps.len()
    }

    /// Normalised 1-D taps.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Offset of the first tap relative to the anchor pixel.
    pub fn origin(&self) -> isize {
        -((self.taps.len() as isize - 1) / 2)
    }

    /// Outer product of the 1-D taps, row-major.
    pub fn weights_2d(&self) -> Vec<f64> {
        let n = self.size();
        let mut w = Vec::with_capacity(n * n);
        for a in &self.taps {
            for b in &self.taps {
                w.push(a * b);
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Padding {
    /// Mirror without repeating the edge sample (`-1 -> 1`).
    #[default]
    Reflect,
    /// Wrap around.
    Circular,
}

impl Padding {
    #[inline]
    pub fn index(self, i: isize, len: usize) -> usize {
        let n = len as isize;
        match self {
            Padding::Circular => i.rem_euclid(n) as usize,
            Padding::Reflect => {
                if n == 1 {
                    return 0;
                }
                let period = 2 * (n - 1);
                let m = i.rem_euclid(period);
                (if m < n { m } else { period - m }) as usize
            }
        }
    }
}

fn check_size(f: &FeatureMap, k: &BlurKernel) -> Result<()> {
    let (h, w) = f.dims();
    if h < k.size() || w < k.size() {
        return Err(Error::invalid(format!(
            "{h}x{w} input is smaller than the {0}x{0} blur kernel",
            k.size()
        )));
    }
    Ok(())
}

/// Low-pass filters with `k` and keeps every second row and column, giving
/// `ceil(H/2) × ceil(W/2)` maps.
pub fn blur_downsample(f: &FeatureMap, k: &BlurKernel) -> Result<FeatureMap> {
    blur_downsample_padded(f, k, Padding::Reflect)
}

pub fn blur_downsample_padded(f: &FeatureMap, k: &BlurKernel, pad: Padding) -> Result<FeatureMap> {
    check_size(f, k)?;
    let (c, h, w) = f.shape();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let weights = k.weights_2d();
    let n = k.size();
    let origin = k.origin();
    Ok(Stack::from_fn(c, oh, ow, |ch, oy, ox| {
        let src = f.map(ch);
        let mut acc = 0.0;
        for i in 0..n {
            let y = pad.index(2 * oy as isize + origin + i as isize, h);
            for j in 0..n {
                let x = pad.index(2 * ox as isize + origin + j as isize, w);
                acc += weights[i * n + j] * src[y * w + x];
            }
        }
        acc
    }))
}

/// Stride-1 blur along rows (horizontal taps).
pub fn blur_rows(f: &FeatureMap, k: &BlurKernel, pad: Padding) -> FeatureMap {
    let (c, h, w) = f.shape();
    Stack::from_fn(c, h, w, |ch, y, x| {
        let row = &f.map(ch)[y * w..(y + 1) * w];
        k.taps().iter().enumerate().map(|(j, t)| t * row[pad.index(x as isize + k.origin() + j as isize, w)]).sum()
    })
}

/// Stride-1 blur along columns (vertical taps).
pub fn blur_cols(f: &FeatureMap, k: &BlurKernel, pad: Padding) -> FeatureMap {
    let (c, h, w) = f.shape();
    Stack::from_fn(c, h, w, |ch, y, x| {
        let src = f.map(ch);
        k.taps().iter().enumerate().map(|(i, t)| t * src[pad.index(y as isize + k.origin() + i as isize, h) * w + x]).sum()
    })
}

/// Keeps every `stride`-th row and column starting at 0.
pub fn subsample(f: &FeatureMap, stride: usize) -> FeatureMap {
    let (c, h, w) = f.shape();
    Stack::from_fn(c, h.div_ceil(stride), w.div_ceil(stride), |ch, y, x| f.get(ch, y * stride, x * stride))
}

/// Dense 2×2 max (stride 1, window anchored top-left) followed by
/// [`blur_downsample`].
pub fn max_blur_pool(f: &FeatureMap, k: &BlurKernel) -> Result<FeatureMap> {
    max_blur_pool_padded(f, k, Padding::Reflect)
}

pub fn max_blur_pool_padded(f: &FeatureMap, k: &BlurKernel, pad: Padding) -> Result<FeatureMap> {
    check_size(f, k)?;
    let (c, h, w) = f.shape();
    // the window's far edge clamps for reflect padding and wraps for circular
    let next = |i: usize, len: usize| match pad {
        Padding::Reflect => (i + 1).min(len - 1),
        Padding::Circular => (i + 1) % len,
    };
    let dense = Stack::from_fn(c, h, w, |ch, y, x| {
        let (y1, x1) = (next(y, h), next(x, w));
        f.get(ch, y, x).max(f.get(ch, y, x1)).max(f.get(ch, y1, x)).max(f.get(ch, y1, x1))
    });
    blur_downsample_padded(&dense, k, pad)
}

/// Normalised coordinate along an axis of `len` samples: -1 at the first
/// index, +1 at the last, 0 for a single sample.
pub fn coord(i: usize, len: usize) -> f64 {
    if len <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (len - 1) as f64
    }
}

/// Appends an x-coordinate and a y-coordinate channel.
pub fn add_coord_channels(f: &FeatureMap) -> FeatureMap {
    let (h, w) = f.dims();
    let xs = Stack::from_fn(1, h, w, |_, _, x| coord(x, w));
    let ys = Stack::from_fn(1, h, w, |_, y, _| coord(y, h));
    Stack::concat(&[f, &xs, &ys]).expect("same spatial size")
}

/// Circularly shifts every map by `dy` rows and `dx` columns, so that
/// `out[y][x] = in[y - dy][x - dx]`.
pub fn circular_shift(f: &FeatureMap, dy: isize, dx: isize) -> FeatureMap {
    let (c, h, w) = f.shape();
    Stack::from_fn(c, h, w, |ch, y, x| {
        f.get(ch, (y as isize - dy).rem_euclid(h as isize) as usize, (x as isize - dx).rem_euclid(w as isize) as usize)
    })
}

/// Cosine similarity of two equally shaped stacks; two all-zero stacks are
/// identical (1), one all-zero stack against a non-zero one scores 0.
pub fn cosine_similarity(a: &FeatureMap, b: &FeatureMap) -> f64 {
    assert_eq!(a.shape(), b.shape(), "cosine similarity needs equal shapes");
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    match (na == 0.0, nb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => dot / (na.sqrt() * nb.sqrt()),
    }
}

/// Mean cosine similarity between `pipeline(shift(f, δ))` and the
/// correspondingly shifted `pipeline(f)`, over the axis-aligned circular
/// shifts `δ ∈ {±1, …, ±max_shift}` along x and along y.
///
/// The compensating output shift is `floor(δ · out / in)`. Negative
/// similarities count as 0, so the score lies in `[0, 1]`; 1 means the
/// pipeline commutes with every probed shift.
pub fn shift_consistency<P>(pipeline: P, f: &FeatureMap, max_shift: usize) -> Result<f64>
where
    P: Fn(&FeatureMap) -> Result<FeatureMap>,
{
    if max_shift == 0 {
        return Err(Error::invalid("max_shift must be at least 1"));
    }
    let (_, h, w) = f.shape();
    let reference = pipeline(f)?;
    let (_, oh, ow) = reference.shape();
    let mut total = 0.0;
    let mut count = 0usize;
    for d in 1..=max_shift as isize {
        for delta in [d, -d] {
            for (dy, dx) in [(delta, 0), (0, delta)] {
                let out = pipeline(&circular_shift(f, dy, dx))?;
                if out.shape() != reference.shape() {
                    return Err(Error::invalid("pipeline output shape depends on the input shift"));
                }
                let cy = (dy * oh as isize).div_euclid(h as isize);
                let cx = (dx * ow as isize).div_euclid(w as isize);
                total += cosine_similarity(&out, &circular_shift(&reference, cy, cx)).max(0.0);
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Stack {
        Stack::from_fn(1, n, n, |_, y, x| ((x + y + 1) % 2) as f64)
    }

    #[test]
    fn kernels_are_normalised_and_symmetric() {
        for n in [2, 3, 5] {
            let k = BlurKernel::new(n).unwrap();
            assert!((k.taps().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            assert!((k.weights_2d().iter().sum::<f64>() - 1.0).abs() < 1e-15);
            let t = k.taps();
            assert!(t.iter().zip(t.iter().rev()).all(|(a, b)| a == b));
        }
        assert!(BlurKernel::new(4).is_err());
    }

    #[test]
    fn reflect_indexing() {
        let p = Padding::Reflect;
        assert_eq!(p.index(-1, 5), 1);
        assert_eq!(p.index(-2, 5), 2);
        assert_eq!(p.index(5, 5), 3);
        assert_eq!(p.index(6, 5), 2);
        assert_eq!(Padding::Circular.index(-1, 5), 4);
    }

    #[test]
    fn constant_passes_unchanged() {
        let f = Stack::filled(2, 7, 9, 0.37);
        for n in [2, 3, 5] {
            let k = BlurKernel::new(n).unwrap();
            for out in [blur_downsample(&f, &k).unwrap(), max_blur_pool(&f, &k).unwrap()] {
                assert_eq!(out.shape(), (2, 4, 5));
                assert!(out.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn size_two_averages_blocks() {
        let f = Stack::from_vec(1, 2, 2, vec![1.0, 2.0, 3.0, 10.0]).unwrap();
        let out = blur_downsample(&f, &BlurKernel::new(2).unwrap()).unwrap();
        assert_eq!(out.shape(), (1, 1, 1));
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn too_small_input_rejected() {
        let f = Stack::zeros(1, 4, 4);
        assert!(blur_downsample(&f, &BlurKernel::new(5).unwrap()).is_err());
        assert!(max_blur_pool(&f, &BlurKernel::new(5).unwrap()).is_err());
    }

    #[test]
    fn coordinate_channels() {
        let f = Stack::filled(1, 3, 3, 7.0);
        let out = add_coord_channels(&f);
        assert_eq!(out.channels(), 3);
        assert_eq!(out.map(0), f.map(0));
        for y in 0..3 {
            assert_eq!(&out.map(1)[y * 3..y * 3 + 3], &[-1.0, 0.0, 1.0]);
        }
        assert_eq!(out.get(2, 0, 1), -1.0);
        assert_eq!(out.get(2, 2, 1), 1.0);
        let one = add_coord_channels(&Stack::zeros(1, 1, 1));
        assert_eq!(one.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn wide_map_linear_spacing() {
        let out = add_coord_channels(&Stack::zeros(0, 2, 64));
        for j in 0..64 {
            let expected = -1.0 + 2.0 * j as f64 / 63.0;
            assert!((out.get(0, 1, j) - expected).abs() < 1e-15);
        }
        assert_eq!(out.get(0, 0, 63), 1.0);
    }

    #[test]
    fn identity_pipeline_is_consistent() {
        let f = Stack::from_fn(2, 8, 8, |c, y, x| ((c * 31 + y * 7 + x * 3) % 11) as f64);
        let s = shift_consistency(|m: &Stack| Ok(m.clone()), &f, 3).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkerboard_aliasing() {
        let f = checkerboard(16);
        let plain = shift_consistency(|m: &Stack| Ok(subsample(m, 2)), &f, 1).unwrap();
        assert!(plain < 0.5, "{plain}");
        let k = BlurKernel::new(3).unwrap();
        let blurred = shift_consistency(|m: &Stack| blur_downsample_padded(m, &k, Padding::Circular), &f, 1).unwrap();
        assert!(blurred > plain);
        assert_eq!(blurred, 1.0);
    }

    #[test]
    fn circular_shift_direction() {
        let f = Stack::from_vec(1, 1, 4, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(circular_shift(&f, 0, 1).data(), &[4.0, 1.0, 2.0, 3.0]);
        assert_eq!(circular_shift(&f, 0, -1).data(), &[2.0, 3.0, 4.0, 1.0]);
    }

    #[test]
    fn cosine_conventions() {
        let z = Stack::zeros(1, 2, 2);
        let o = Stack::filled(1, 2, 2, 1.0);
        assert_eq!(cosine_similarity(&z, &z), 1.0);
        assert_eq!(cosine_similarity(&z, &o), 0.0);
        assert!((cosine_similarity(&o, &o) - 1.0).abs() < 1e-15);
    }
}
