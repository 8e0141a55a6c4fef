//! Channel-major map stacks and the `HMK1` container.
//!
//! Container layout (all little-endian):
//!
//! ```text
//! b"HMK1" | n_maps: u32 | height: u32 | width: u32 | n_maps*height*width f32
//! ```
//!
//! Values are row-major within a map and map-major across the stack.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HMK1";
const HEADER_LEN: usize = 16;

/// A `channels × height × width` array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Stack {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// Landmark or boundary heatmaps.
pub type HeatmapStack = Stack;
/// Network activations.
pub type FeatureMap = Stack;

impl Stack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        Stack { channels, height, width, data: vec![value; channels * height * width] }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::invalid(format!(
                "{} values do not fill a {channels}x{height}x{width} stack",
                data.len()
            )));
        }
        Ok(Stack { channels, height, width, data })
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Stack { channels, height, width, data }
    }

    /// Stacks equally sized maps along the channel axis.
    pub fn concat(parts: &[&Stack]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return Ok(Stack::zeros(0, 0, 0));
        };
        let (h, w) = first.dims();
        let mut data = Vec::new();
        let mut channels = 0;
        for p in parts {
            if p.dims() != (h, w) {
                return Err(Error::invalid(format!(
                    "cannot concatenate {}x{} with {}x{} maps",
                    h, w, p.height, p.width
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Ok(Stack { channels, height: h, width: w, data })
    }

    /// Copies out channels `[start, start + count)`.
    pub fn channel_range(&self, start: usize, count: usize) -> Stack {
        let plane = self.plane_len();
        Stack {
            channels: count,
            height: self.height,
            width: self.width,
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        }
    }

    /// Copies out the listed channels in order.
    pub fn select(&self, channels: &[usize]) -> Stack {
        let mut data = Vec::with_capacity(channels.len() * self.plane_len());
        for &c in channels {
            data.extend_from_slice(self.map(c));
        }
        Stack { channels: channels.len(), height: self.height, width: self.width, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, c: usize) -> &[f64] {
        let plane = self.plane_len();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn map_mut(&mut self, c: usize) -> &mut [f64] {
        let plane = self.plane_len();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn map_values(mut self, f: impl Fn(f64) -> f64) -> Stack {
        self.data.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Values rounded to `f32`, as they are stored on disk.
    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn max_abs_diff(&self, other: &Stack) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// Serialises a stack into `HMK1` bytes.
pub fn encode(stack: &Stack) -> Result<Vec<u8>> {
    let dims = [stack.channels, stack.height, stack.width];
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * stack.data.len());
    out.extend_from_slice(MAGIC);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in stack.to_f32() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses `HMK1` bytes. Trailing bytes beyond the declared payload are
/// rejected as well as short payloads.
pub fn decode(bytes: &[u8]) -> Result<Stack> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &bytes[..4])));
    }
    let field = |i: usize| {
        let o = 4 + 4 * i;
        u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
    };
    let (n, h, w) = (field(0), field(1), field(2));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::Format("declared size overflows".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() / 4 < count {
        return Err(Error::Format(format!(
            "truncated payload: header declares {n} maps of {h}x{w} ({count} values), found {} bytes",
            payload.len()
        )));
    }
    if payload.len() != 4 * count {
        return Err(Error::Format(format!(
            "payload holds {} bytes, expected {}",
            payload.len(),
            4 * count
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok(Stack { channels: n, height: h, width: w, data })
}

pub fn write_stack(stack: &Stack, path: &Path) -> Result<()> {
    let bytes = encode(stack)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_stack(path: &Path) -> Result<Stack> {
    decode(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let s = Stack::from_vec(1, 1, 2, vec![1.0, -2.5]).unwrap();
        let b = encode(&s).unwrap();
        assert_eq!(&b[..4], b"HMK1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&b[20..24], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn truncated_payload() {
        let s = Stack::filled(10, 2, 3, 0.5);
        let mut b = encode(&s).unwrap();
        b.truncate(b.len() - 2 * 3 * 4);
        let err = decode(&b).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("truncated")), "{err}");
    }

    #[test]
    fn bad_magic() {
        let mut b = encode(&Stack::zeros(1, 1, 1)).unwrap();
        b[3] = b'2';
        assert!(matches!(decode(&b), Err(Error::Format(_))));
        assert!(matches!(decode(b"HMK"), Err(Error::Format(_))));
    }

    #[test]
    fn empty_stack_roundtrips() {
        let s = Stack::zeros(0, 64, 64);
        let b = encode(&s).unwrap();
        assert_eq!(b.len(), 16);
        assert_eq!(decode(&b).unwrap(), s);
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut b = encode(&Stack::zeros(1, 1, 1)).unwrap();
        b.extend_from_slice(&[0, 0, 0, 0]);
        assert!(decode(&b).is_err());
    }

    #[test]
    fn select_and_concat() {
        let s = Stack::from_fn(3, 2, 2, |c, y, x| (c * 100 + y * 10 + x) as f64);
        let picked = s.select(&[2, 0]);
        assert_eq!(picked.get(0, 1, 1), 211.0);
        assert_eq!(picked.get(1, 0, 1), 1.0);
        let joined = Stack::concat(&[&s, &picked]).unwrap();
        assert_eq!(joined.channels(), 5);
        assert_eq!(joined.channel_range(3, 2), picked);
        assert!(Stack::concat(&[&s, &Stack::zeros(1, 3, 2)]).is_err());
    }
}
