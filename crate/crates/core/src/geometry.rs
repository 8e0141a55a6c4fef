//! Landmark records, annotation ingestion and coordinate transforms.
//!
//! Annotation records use the WFLW line layout generalised to any landmark
//! count `K`:
//!
//! ```text
//! x1 y1 ... xK yK  xmin ymin xmax ymax  a1 ... a6  image_path
//! ```
//!
//! The six attribute flags are, in order: pose, expression, illumination,
//! make-up, occlusion and blur.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Landmark count of the WFLW annotation scheme.
pub const WFLW_POINTS: usize = 98;

/// Number of per-sample attribute flags.
pub const NUM_ATTRIBUTES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attribute {
    Pose,
    Expression,
    Illumination,
    MakeUp,
    Occlusion,
    Blur,
}

impl Attribute {
    pub const ALL: [Attribute; NUM_ATTRIBUTES] = [
        Attribute::Pose,
        Attribute::Expression,
        Attribute::Illumination,
        Attribute::MakeUp,
        Attribute::Occlusion,
        Attribute::Blur,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Pose => "pose",
            Attribute::Expression => "expression",
            Attribute::Illumination => "illumination",
            Attribute::MakeUp => "make-up",
            Attribute::Occlusion => "occlusion",
            Attribute::Blur => "blur",
        }
    }
}

/// The six binary condition flags attached to a face sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Attributes(pub [bool; NUM_ATTRIBUTES]);

impl Attributes {
    pub fn has(&self, attr: Attribute) -> bool {
        self.0[attr.index()]
    }

    pub fn set(&mut self, attr: Attribute, on: bool) {
        self.0[attr.index()] = on;
    }

    pub fn is_empty(&self) -> bool {
        self.0.iter().all(|f| !f)
    }

    pub fn bits(&self) -> [u8; NUM_ATTRIBUTES] {
        self.0.map(u8::from)
    }
}

/// Axis-aligned face box in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x_min < self.x_max && self.y_min < self.y_max)
            || ![self.x_min, self.y_min, self.x_max, self.y_max]
                .iter()
                .all(|v| v.is_finite())
    }

    /// Grows the box by `margin` times its size on every side.
    pub fn padded(&self, margin: f64) -> BBox {
        let dx = self.width() * margin;
        let dy = self.height() * margin;
        BBox::new(self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy)
    }
}

/// One annotated face.
///
/// `valid` flags landmarks that are usable for heatmap generation; points
/// pushed out of the frame by augmentation keep their coordinates but are
/// marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Point>,
    pub valid: Vec<bool>,
    pub image_id: String,
    pub bbox: BBox,
    pub attributes: Attributes,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>, bbox: BBox, attributes: Attributes, image_id: impl Into<String>) -> Self {
        let valid = vec![true; points.len()];
        LandmarkSet { points, valid, image_id: image_id.into(), bbox, attributes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid.get(index).copied().unwrap_or(false)
    }

    /// Marks every point outside `[0, size)²` invalid.
    pub fn mask_outside(&mut self, size: f64) {
        for (p, v) in self.points.iter().zip(self.valid.iter_mut()) {
            let inside = p.x >= 0.0 && p.x < size && p.y >= 0.0 && p.y < size;
            *v = *v && inside;
        }
    }

    /// Serialises in the annotation record layout.
    pub fn to_record(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = write!(out, "{} {} ", p.x, p.y);
        }
        let b = &self.bbox;
        let _ = write!(out, "{} {} {} {}", b.x_min, b.y_min, b.x_max, b.y_max);
        for bit in self.attributes.bits() {
            let _ = write!(out, " {bit}");
        }
        let id = if self.image_id.is_empty() { "-" } else { &self.image_id };
        let _ = write!(out, " {id}");
        out
    }
}

/// Number of whitespace-separated fields in a record with `n_points` landmarks.
pub fn record_field_count(n_points: usize) -> usize {
    2 * n_points + 4 + NUM_ATTRIBUTES + 1
}

fn parse_f64(fields: &[&str], index: usize) -> Result<f64> {
    let raw = fields[index];
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::ParseField { index, value: raw.to_string() })
}

/// Parses one annotation record holding `n_points` landmarks.
pub fn parse_record(line: &str, n_points: usize) -> Result<LandmarkSet> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    let expected = record_field_count(n_points);
    if fields.len() != expected {
        return Err(Error::MalformedRecord { expected, found: fields.len() });
    }
    let mut points = Vec::with_capacity(n_points);
    for k in 0..n_points {
        points.push(Point::new(parse_f64(&fields, 2 * k)?, parse_f64(&fields, 2 * k + 1)?));
    }
    let off = 2 * n_points;
    let bbox = BBox::new(
        parse_f64(&fields, off)?,
        parse_f64(&fields, off + 1)?,
        parse_f64(&fields, off + 2)?,
        parse_f64(&fields, off + 3)?,
    );
    if bbox.is_degenerate() {
        return Err(Error::invalid(format!(
            "bounding box ({}, {}, {}, {}) is degenerate",
            bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max
        )));
    }
    let mut attributes = Attributes::default();
    for c in 0..NUM_ATTRIBUTES {
        let index = off + 4 + c;
        attributes.0[c] = match fields[index] {
            "0" => false,
            "1" => true,
            other => return Err(Error::ParseField { index, value: other.to_string() }),
        };
    }
    let image_id = fields[off + 4 + NUM_ATTRIBUTES].to_string();
    Ok(LandmarkSet::new(points, bbox, attributes, image_id))
}

/// Parses a WFLW annotation line (98 landmarks, 207 fields).
pub fn parse_wflw_line(line: &str) -> Result<LandmarkSet> {
    parse_record(line, WFLW_POINTS)
}

/// Reads only the leading `2 * n_points` coordinates of a record; any
/// trailing bbox, attribute or path fields are ignored. Used for prediction
/// files.
pub fn parse_coordinates(line: &str, n_points: usize) -> Result<Vec<Point>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 2 * n_points {
        return Err(Error::MalformedRecord { expected: 2 * n_points, found: fields.len() });
    }
    (0..n_points)
        .map(|k| Ok(Point::new(parse_f64(&fields, 2 * k)?, parse_f64(&fields, 2 * k + 1)?)))
        .collect()
}

/// Non-empty, non-comment lines of a record file with their 1-based line numbers.
pub fn record_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses every record of an annotation file, failing on the first bad line.
pub fn parse_records(text: &str, n_points: usize) -> Result<Vec<LandmarkSet>> {
    record_lines(text)
        .map(|(no, line)| {
            parse_record(line, n_points).map_err(|e| Error::invalid(format!("line {no}: {e}")))
        })
        .collect()
}

/// Horizontal-mirror landmark correspondence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipPairTable {
    mirror: Vec<usize>,
}

impl FlipPairTable {
    /// Builds the table from swapped pairs; indices not mentioned map to
    /// themselves. Every index may appear in at most one pair.
    pub fn from_pairs(n_points: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut mirror: Vec<Option<usize>> = vec![None; n_points];
        for &(i, j) in pairs {
            if i >= n_points || j >= n_points {
                return Err(Error::config(format!(
                    "flip pair ({i}, {j}) out of range for {n_points} points"
                )));
            }
            for (a, b) in [(i, j), (j, i)] {
                match mirror[a] {
                    None => mirror[a] = Some(b),
                    Some(prev) if prev == b => {}
                    Some(prev) => {
                        return Err(Error::config(format!(
                            "landmark {a} paired with both {prev} and {b}"
                        )))
                    }
                }
            }
        }
        let mirror = mirror.iter().enumerate().map(|(i, m)| m.unwrap_or(i)).collect();
        Ok(FlipPairTable { mirror })
    }

    /// Parses a text table of zero-based `i j` pairs, one per line; `#`
    /// starts a comment.
    pub fn parse(text: &str, n_points: usize) -> Result<Self> {
        let mut pairs = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let nums: Vec<usize> = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::config(format!("flip table line {}: expected two indices", no + 1)))?;
            match nums[..] {
                [i, j] => pairs.push((i, j)),
                _ => return Err(Error::config(format!("flip table line {}: expected two indices", no + 1))),
            }
        }
        Self::from_pairs(n_points, &pairs)
    }

    pub fn load(path: &Path, n_points: usize) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, n_points)
    }

    /// The bundled 98-point WFLW table.
    pub fn wflw98() -> Self {
        Self::parse(include_str!("../data/wflw98_flip_pairs.txt"), WFLW_POINTS)
            .expect("bundled flip table is valid")
    }

    pub fn identity(n_points: usize) -> Self {
        FlipPairTable { mirror: (0..n_points).collect() }
    }

    pub fn len(&self) -> usize {
        self.mirror.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mirror.is_empty()
    }

    pub fn mirror_of(&self, index: usize) -> usize {
        self.mirror[index]
    }

    /// Deduplicated `(i, j)` pairs with `i < j`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.mirror.iter().enumerate().filter(|&(i, &j)| i < j).map(|(i, &j)| (i, j)).collect()
    }

    pub fn self_paired(&self) -> Vec<usize> {
        self.mirror.iter().enumerate().filter(|&(i, &j)| i == j).map(|(i, _)| i).collect()
    }
}

/// Planar affine map `p' = M p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine2 {
    pub m: [[f64; 2]; 2],
    pub t: [f64; 2],
}

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2 { m: [[1.0, 0.0], [0.0, 1.0]], t: [0.0, 0.0] };

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine2 { t: [dx, dy], ..Self::IDENTITY }
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Affine2 { m: [[sx, 0.0], [0.0, sy]], t: [0.0, 0.0] }
    }

    /// Rotation by `deg` degrees, positive turning +x towards +y.
    pub fn rotation(deg: f64) -> Self {
        let (s, c) = deg.to_radians().sin_cos();
        Affine2 { m: [[c, -s], [s, c]], t: [0.0, 0.0] }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Affine2) -> Affine2 {
        let a = &self.m;
        let b = &first.m;
        let m = [
            [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
            [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
        ];
        let t = self.apply(Point::new(first.t[0], first.t[1]));
        Affine2 { m, t: [t.x, t.y] }
    }

    pub fn about(center: Point, linear: &Affine2) -> Affine2 {
        Affine2::translation(center.x, center.y)
            .compose(linear)
            .compose(&Affine2::translation(-center.x, -center.y))
    }

    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.m[0][0] * p.x + self.m[0][1] * p.y + self.t[0],
            self.m[1][0] * p.x + self.m[1][1] * p.y + self.t[1],
        )
    }

    pub fn determinant(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn inverse(&self) -> Option<Affine2> {
        let det = self.determinant();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let m = [
            [self.m[1][1] / det, -self.m[0][1] / det],
            [-self.m[1][0] / det, self.m[0][0] / det],
        ];
        let inv = Affine2 { m, t: [0.0, 0.0] };
        let t = inv.apply(Point::new(-self.t[0], -self.t[1]));
        Some(Affine2 { m, t: [t.x, t.y] })
    }
}

/// Maps the (optionally padded) bbox onto `[0, out_size)²` and returns the
/// transform together with the transformed sample.
pub fn crop_resize(sample: &LandmarkSet, out_size: usize, margin: f64) -> Result<(Affine2, LandmarkSet)> {
    if out_size == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    if !(margin.is_finite() && margin > -0.5) {
        return Err(Error::invalid(format!("bbox margin {margin} out of range")));
    }
    if sample.bbox.is_degenerate() {
        return Err(Error::invalid("degenerate bounding box"));
    }
    let b = sample.bbox.padded(margin);
    let size = out_size as f64;
    let transform = Affine2::scaling(size / b.width(), size / b.height())
        .compose(&Affine2::translation(-b.x_min, -b.y_min));
    let mut out = sample.clone();
    out.points = sample.points.iter().map(|&p| transform.apply(p)).collect();
    out.bbox = BBox::new(0.0, 0.0, size, size);
    Ok((transform, out))
}

/// Training-time augmentation ranges. Every range is symmetric about zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub scale_frac: f64,
    pub crop_px: i64,
    pub flip_prob: f64,
    pub rng_seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams { rotation_deg: 30.0, scale_frac: 0.15, crop_px: 25, flip_prob: 0.5, rng_seed: 0 }
    }
}

impl AugmentParams {
    /// No-op augmentation; useful as a base for forcing single transforms.
    pub fn none() -> Self {
        AugmentParams { rotation_deg: 0.0, scale_frac: 0.0, crop_px: 0, flip_prob: 0.0, rng_seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.rotation_deg >= 0.0
            && self.rotation_deg.is_finite()
            && (0.0..1.0).contains(&self.scale_frac)
            && self.crop_px >= 0
            && (0.0..=1.0).contains(&self.flip_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid augmentation parameters {self:?}")))
        }
    }
}

/// The concrete transform drawn for one augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    pub scale: f64,
    pub shift: (i64, i64),
    pub flip: bool,
}

impl AugmentDraw {
    pub fn sample(params: &AugmentParams) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        let rotation_deg = rng.gen_range(-params.rotation_deg..=params.rotation_deg);
        let scale = 1.0 + rng.gen_range(-params.scale_frac..=params.scale_frac);
        let dx = rng.gen_range(-params.crop_px..=params.crop_px);
        let dy = rng.gen_range(-params.crop_px..=params.crop_px);
        let flip = rng.gen::<f64>() < params.flip_prob;
        AugmentDraw { rotation_deg, scale, shift: (dx, dy), flip }
    }
}

/// Applies rotation and scaling about the frame centre, an integer crop
/// shift and an optional mirror (with landmark re-indexing) to a sample in
/// a `frame_size`² frame.
pub fn augment(sample: &LandmarkSet, params: &AugmentParams, flip_table: &FlipPairTable, frame_size: usize) -> Result<LandmarkSet> {
    params.validate()?;
    Ok(apply_augment(sample, &AugmentDraw::sample(params), flip_table, frame_size))
}

pub fn apply_augment(sample: &LandmarkSet, draw: &AugmentDraw, flip_table: &FlipPairTable, frame_size: usize) -> LandmarkSet {
    assert_eq!(flip_table.len(), sample.len(), "flip table does not match the landmark count");
    let size = frame_size as f64;
    let center = Point::new(size / 2.0, size / 2.0);
    let geometric = Affine2::translation(draw.shift.0 as f64, draw.shift.1 as f64).compose(&Affine2::about(
        center,
        &Affine2::scaling(draw.scale, draw.scale).compose(&Affine2::rotation(draw.rotation_deg)),
    ));
    let moved: Vec<Point> = if draw.rotation_deg == 0.0 && draw.scale == 1.0 && draw.shift == (0, 0) {
        sample.points.clone()
    } else {
        sample.points.iter().map(|&p| geometric.apply(p)).collect()
    };
    let mut out = sample.clone();
    if draw.flip {
        let last = size - 1.0;
        for (i, p) in moved.iter().enumerate() {
            let j = flip_table.mirror_of(i);
            out.points[j] = Point::new(last - p.x, p.y);
            out.valid[j] = sample.valid[i];
        }
    } else {
        out.points = moved;
    }
    out.mask_outside(size);
    out
}

/// Fraction of samples carrying each attribute flag.
pub fn attribute_fractions(samples: &[LandmarkSet]) -> Result<[f64; NUM_ATTRIBUTES]> {
    if samples.is_empty() {
        return Err(Error::invalid("attribute fractions need at least one sample"));
    }
    let mut counts = [0usize; NUM_ATTRIBUTES];
    for s in samples {
        for (c, &on) in s.attributes.0.iter().enumerate() {
            counts[c] += usize::from(on);
        }
    }
    let n = samples.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n_points: usize, attrs: &str) -> String {
        let mut s = String::new();
        for k in 0..n_points {
            let _ = write!(s, "{}.5 {}.25 ", k, k + 1);
        }
        s.push_str("10 20 200 220 ");
        s.push_str(attrs);
        s.push_str(" 51--Dresses/51_5.jpg");
        s
    }

    #[test]
    fn parses_well_formed_wflw_line() {
        let line = record(98, "1 0 0 0 1 0");
        assert_eq!(line.split_whitespace().count(), 207);
        let set = parse_wflw_line(&line).unwrap();
        assert_eq!(set.len(), 98);
        assert_eq!(set.points[3], Point::new(3.5, 4.25));
        assert_eq!(set.bbox, BBox::new(10.0, 20.0, 200.0, 220.0));
        assert!(set.attributes.has(Attribute::Pose));
        assert!(set.attributes.has(Attribute::Occlusion));
        assert!(!set.attributes.has(Attribute::Blur));
        assert_eq!(set.image_id, "51--Dresses/51_5.jpg");
    }

    #[test]
    fn short_line_reports_counts() {
        let line = record(98, "0 0 0 0 0 0");
        let short: Vec<&str> = line.split_whitespace().take(206).collect();
        match parse_wflw_line(&short.join(" ")) {
            Err(Error::MalformedRecord { expected, found }) => {
                assert_eq!((expected, found), (207, 206));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_attributes() {
        let set = parse_wflw_line(&record(98, "0 0 0 0 0 0")).unwrap();
        assert_eq!(set.attributes.bits(), [0; 6]);
        assert!(set.attributes.is_empty());
    }

    #[test]
    fn non_numeric_coordinate_names_field() {
        let line = record(98, "0 0 0 0 0 0").replacen("2.5", "abc", 1);
        match parse_wflw_line(&line) {
            Err(Error::ParseField { index, value }) => {
                assert_eq!(index, 4);
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_roundtrip() {
        let set = parse_record(&record(5, "0 1 0 0 0 1"), 5).unwrap();
        assert_eq!(parse_record(&set.to_record(), 5).unwrap(), set);
    }

    #[test]
    fn crop_identity_and_scale() {
        let mut s = LandmarkSet::new(vec![Point::new(10.0, 10.0)], BBox::new(0.0, 0.0, 256.0, 256.0), Attributes::default(), "a");
        let (t, out) = crop_resize(&s, 256, 0.0).unwrap();
        assert_eq!(t, Affine2::IDENTITY);
        assert_eq!(out.points[0], Point::new(10.0, 10.0));

        s.bbox = BBox::new(0.0, 0.0, 128.0, 128.0);
        let (_, out) = crop_resize(&s, 256, 0.0).unwrap();
        assert_eq!(out.points[0], Point::new(20.0, 20.0));

        s.bbox = BBox::new(100.0, 50.0, 228.0, 178.0);
        s.points[0] = Point::new(100.0, 50.0);
        let (t, out) = crop_resize(&s, 256, 0.0).unwrap();
        assert_eq!(out.points[0], Point::new(0.0, 0.0));
        // (164, 114) is the bbox centre; it lands on the frame centre
        assert_eq!(t.apply(Point::new(164.0, 114.0)), Point::new(128.0, 128.0));
    }

    #[test]
    fn crop_rejects_degenerate_bbox() {
        let s = LandmarkSet::new(vec![], BBox::new(5.0, 5.0, 5.0, 9.0), Attributes::default(), "a");
        assert!(matches!(crop_resize(&s, 256, 0.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn margin_pads_bbox() {
        let s = LandmarkSet::new(vec![Point::new(0.0, 0.0)], BBox::new(0.0, 0.0, 100.0, 100.0), Attributes::default(), "a");
        let (_, out) = crop_resize(&s, 120, 0.1).unwrap();
        assert!((out.points[0].x - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_ranges_are_identity() {
        let s = LandmarkSet::new(
            vec![Point::new(12.3, 45.6), Point::new(200.1, 17.0)],
            BBox::new(0.0, 0.0, 256.0, 256.0),
            Attributes::default(),
            "x",
        );
        let params = AugmentParams { rng_seed: 99, ..AugmentParams::none() };
        let out = augment(&s, &params, &FlipPairTable::identity(2), 256).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn forced_flip_reindexes() {
        let s = LandmarkSet::new(
            vec![Point::new(10.0, 40.0), Point::new(100.0, 50.0), Point::new(128.0, 60.0)],
            BBox::new(0.0, 0.0, 256.0, 256.0),
            Attributes::default(),
            "x",
        );
        let table = FlipPairTable::from_pairs(3, &[(0, 1)]).unwrap();
        let params = AugmentParams { flip_prob: 1.0, ..AugmentParams::none() };
        let out = augment(&s, &params, &table, 256).unwrap();
        assert_eq!(out.points[1], Point::new(245.0, 40.0));
        assert_eq!(out.points[0], Point::new(155.0, 50.0));
        assert_eq!(out.points[2], Point::new(127.0, 60.0));
    }

    #[test]
    fn rotation_about_centre() {
        let s = LandmarkSet::new(vec![Point::new(228.0, 128.0)], BBox::new(0.0, 0.0, 256.0, 256.0), Attributes::default(), "x");
        let draw = AugmentDraw { rotation_deg: 30.0, scale: 1.0, shift: (0, 0), flip: false };
        let out = apply_augment(&s, &draw, &FlipPairTable::identity(1), 256);
        // 128 + 100 cos 30°, 128 + 100 sin 30°
        assert!((out.points[0].x - 214.602_540_378_443_87).abs() < 1e-9);
        assert!((out.points[0].y - 178.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_frame_points_are_masked_not_clamped() {
        let s = LandmarkSet::new(vec![Point::new(250.0, 128.0)], BBox::new(0.0, 0.0, 256.0, 256.0), Attributes::default(), "x");
        let draw = AugmentDraw { rotation_deg: 0.0, scale: 1.0, shift: (25, 0), flip: false };
        let out = apply_augment(&s, &draw, &FlipPairTable::identity(1), 256);
        assert_eq!(out.points[0], Point::new(275.0, 128.0));
        assert!(!out.valid[0]);
    }

    #[test]
    fn flip_table_parsing() {
        let t = FlipPairTable::parse("# pairs\n0 2\n1 1\n", 4).unwrap();
        assert_eq!(t.pairs(), vec![(0, 2)]);
        assert_eq!(t.self_paired(), vec![1, 3]);
        assert!(FlipPairTable::parse("0 2\n2 3\n", 4).is_err());
        assert!(FlipPairTable::parse("0 9\n", 4).is_err());
        assert!(FlipPairTable::parse("0\n", 4).is_err());
    }

    #[test]
    fn wflw_table_covers_every_index_once() {
        let t = FlipPairTable::wflw98();
        let mut seen = vec![0; 98];
        for (i, j) in t.pairs() {
            seen[i] += 1;
            seen[j] += 1;
        }
        for i in t.self_paired() {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(t.mirror_of(60), 72);
        assert_eq!(t.mirror_of(96), 97);
        assert_eq!(t.mirror_of(16), 16);
    }

    #[test]
    fn fractions() {
        let mk = |attrs: [bool; 6]| LandmarkSet::new(vec![], BBox::new(0.0, 0.0, 1.0, 1.0), Attributes(attrs), "");
        let mut v = vec![mk([false; 6]); 4];
        v[2].attributes.set(Attribute::Pose, true);
        let f = attribute_fractions(&v).unwrap();
        assert_eq!(f[0], 0.25);
        assert_eq!(f[5], 0.0);
        for s in &mut v {
            s.attributes.set(Attribute::Blur, true);
        }
        assert_eq!(attribute_fractions(&v).unwrap()[5], 1.0);
        assert!(attribute_fractions(&[]).is_err());
    }
}
