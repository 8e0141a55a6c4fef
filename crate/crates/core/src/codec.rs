//! Landmark and boundary heatmap codecs.
//!
//! Heatmap pixel `(row, col)` has its centre at grid coordinate
//! `(x, y) = (col, row)`. Input-space coordinates map onto the grid with
//! centres aligned: `g = (p + 0.5) * res / input - 0.5`. With this mapping a
//! mirror `x -> input - 1 - x` in input space is exactly the mirror
//! `col -> W - 1 - col` on the grid.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet, Point, WFLW_POINTS};
use crate::tensor::{HeatmapStack, Stack};

/// Number of boundaries in the default scheme.
pub const NUM_BOUNDARIES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    /// Standard deviation in heatmap pixels.
    pub sigma: f64,
    /// Support radius as a multiple of `sigma`.
    pub truncate: f64,
}

impl Default for GaussianParams {
    fn default() -> Self {
        GaussianParams { sigma: 1.5, truncate: 3.0 }
    }
}

impl GaussianParams {
    pub fn with_sigma(sigma: f64) -> Self {
        GaussianParams { sigma, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma > 0.0 && self.sigma.is_finite() && self.truncate > 0.0 {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid Gaussian parameters {self:?}")))
        }
    }

    pub fn radius(&self) -> f64 {
        self.sigma * self.truncate
    }

    /// Truncated Gaussian response at squared distance `d2`.
    pub fn response(&self, d2: f64) -> f64 {
        let r = self.radius();
        if d2 > r * r {
            0.0
        } else {
            (-d2 / (2.0 * self.sigma * self.sigma)).exp()
        }
    }
}

/// Correspondence between the cropped input frame and the heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMapping {
    pub input_size: f64,
    pub height: usize,
    pub width: usize,
}

impl Default for GridMapping {
    fn default() -> Self {
        GridMapping { input_size: 256.0, height: 64, width: 64 }
    }
}

impl GridMapping {
    pub fn new(input_size: usize, height: usize, width: usize) -> Result<Self> {
        if input_size == 0 || height == 0 || width == 0 {
            return Err(Error::invalid(format!(
                "non-positive resolution: input {input_size}, grid {height}x{width}"
            )));
        }
        Ok(GridMapping { input_size: input_size as f64, height, width })
    }

    pub fn to_grid(&self, p: Point) -> Point {
        Point::new(
            (p.x + 0.5) * self.width as f64 / self.input_size - 0.5,
            (p.y + 0.5) * self.height as f64 / self.input_size - 0.5,
        )
    }

    pub fn to_input(&self, g: Point) -> Point {
        Point::new(
            (g.x + 0.5) * self.input_size / self.width as f64 - 0.5,
            (g.y + 0.5) * self.input_size / self.height as f64 - 0.5,
        )
    }

    /// Whether `g` falls within some pixel of the grid.
    pub fn on_grid(&self, g: Point) -> bool {
        g.x >= -0.5 && g.x < self.width as f64 - 0.5 && g.y >= -0.5 && g.y < self.height as f64 - 0.5
    }
}

fn normalize_peak(map: &mut [f64]) {
    let peak = map.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 && peak != 1.0 {
        map.iter_mut().for_each(|v| *v /= peak);
    }
}

/// Renders one map from a squared-distance field, then rescales its peak to 1.
fn render(map: &mut [f64], width: usize, g: &GaussianParams, dist2: impl Fn(f64, f64) -> f64) {
    for (i, v) in map.iter_mut().enumerate() {
        let (row, col) = (i / width, i % width);
        *v = g.response(dist2(col as f64, row as f64));
    }
    normalize_peak(map);
}

/// Encodes points already expressed in grid coordinates. Points flagged
/// invalid or lying off the grid produce all-zero maps.
pub fn encode_grid_points(points: &[Point], valid: &[bool], height: usize, width: usize, g: &GaussianParams) -> Result<HeatmapStack> {
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("non-positive resolution {height}x{width}")));
    }
    g.validate()?;
    let mapping = GridMapping { input_size: width as f64, height, width };
    let mut out = Stack::zeros(points.len(), height, width);
    for (k, &p) in points.iter().enumerate() {
        let usable = valid.get(k).copied().unwrap_or(true) && p.x.is_finite() && p.y.is_finite() && mapping.on_grid(p);
        if !usable {
            continue;
        }
        render(out.map_mut(k), width, g, |x, y| (x - p.x).powi(2) + (y - p.y).powi(2));
    }
    Ok(out)
}

/// Encodes every landmark of a sample (in input-frame pixels) as one
/// Gaussian heatmap on the grid described by `mapping`.
pub fn encode_landmarks(sample: &LandmarkSet, mapping: &GridMapping, g: &GaussianParams) -> Result<HeatmapStack> {
    let grid: Vec<Point> = sample.points.iter().map(|&p| mapping.to_grid(p)).collect();
    encode_grid_points(&grid, &sample.valid, mapping.height, mapping.width, g)
}

/// How the decoder treats a peak whose strongest neighbours tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// When the tied neighbours include an opposing pair (left and right,
    /// or up and down) the response is symmetric about the peak and no
    /// offset is applied. Other ties go to the lexicographically smallest
    /// neighbour.
    #[default]
    HoldOnSymmetric,
    /// Always offset towards the lexicographically smallest tied neighbour.
    Lexicographic,
}

/// Decodes one `height × width` map to a sub-pixel grid coordinate.
///
/// The argmax pixel is moved a quarter pixel towards its strongest
/// 4-neighbour. Argmax ties resolve to the smallest `(row, col)`; NaNs are
/// ignored.
pub fn decode_heatmap(map: &[f64], height: usize, width: usize, tie: TieRule) -> Result<Point> {
    if height < 3 || width < 3 {
        return Err(Error::invalid(format!("decoding needs at least 3x3 maps, got {height}x{width}")));
    }
    if map.len() != height * width {
        return Err(Error::invalid("map length does not match its dimensions"));
    }
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] || map[best].is_nan() {
            best = i;
        }
    }
    let (row, col) = (best / width, best % width);
    // (drow, dcol) in lexicographic order of the neighbour's (row, col)
    const NEIGHBOURS: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    let mut tied: Vec<(isize, isize)> = Vec::with_capacity(4);
    let mut top = f64::NEG_INFINITY;
    for (dr, dc) in NEIGHBOURS {
        let (r, c) = (row as isize + dr, col as isize + dc);
        if r < 0 || c < 0 || r >= height as isize || c >= width as isize {
            continue;
        }
        let v = map[r as usize * width + c as usize];
        if v.is_nan() {
            continue;
        }
        if v > top {
            top = v;
            tied.clear();
            tied.push((dr, dc));
        } else if v == top {
            tied.push((dr, dc));
        }
    }
    let centre = Point::new(col as f64, row as f64);
    let Some(&(dr, dc)) = tied.first() else {
        return Ok(centre);
    };
    if tie == TieRule::HoldOnSymmetric && tied.len() > 1 {
        let opposing = tied.iter().any(|&(a, b)| tied.contains(&(-a, -b)));
        if opposing {
            return Ok(centre);
        }
    }
    Ok(Point::new(centre.x + 0.25 * dc as f64, centre.y + 0.25 * dr as f64))
}

/// Decodes every map of a stack into grid coordinates.
pub fn decode_stack(stack: &HeatmapStack, tie: TieRule) -> Result<Vec<Point>> {
    let (h, w) = stack.dims();
    (0..stack.channels()).map(|c| decode_heatmap(stack.map(c), h, w, tie)).collect()
}

/// Decodes every map and rescales the result into input-frame pixels.
pub fn decode_to_input(stack: &HeatmapStack, mapping: &GridMapping, tie: TieRule) -> Result<Vec<Point>> {
    Ok(decode_stack(stack, tie)?.into_iter().map(|g| mapping.to_input(g)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Boundary {
    pub indices: Vec<usize>,
    pub closed: bool,
}

impl Boundary {
    /// Consecutive index pairs, including the closing edge when closed.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut segs: Vec<(usize, usize)> = self.indices.windows(2).map(|w| (w[0], w[1])).collect();
        if self.closed && self.indices.len() > 2 {
            segs.push((self.indices[self.indices.len() - 1], self.indices[0]));
        }
        segs
    }
}

/// Ordered boundaries, each a polyline through landmark indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoundaryScheme {
    pub boundaries: Vec<Boundary>,
    pub n_points: usize,
}

impl BoundaryScheme {
    pub fn new(boundaries: Vec<Boundary>, n_points: usize) -> Result<Self> {
        if boundaries.is_empty() {
            return Err(Error::invalid("boundary scheme is empty"));
        }
        for (m, b) in boundaries.iter().enumerate() {
            if b.indices.len() < 2 {
                return Err(Error::config(format!("boundary {m} lists fewer than two landmarks")));
            }
            if let Some(&bad) = b.indices.iter().find(|&&i| i >= n_points) {
                return Err(Error::config(format!(
                    "boundary {m} references landmark {bad}, scheme has {n_points}"
                )));
            }
        }
        Ok(BoundaryScheme { boundaries, n_points })
    }

    /// Parses `closed|open i1 i2 ...` lines; `#` starts a comment. When
    /// `expected` is given the boundary count must match it.
    pub fn parse(text: &str, n_points: usize, expected: Option<usize>) -> Result<Self> {
        let mut boundaries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut tokens = line.split_whitespace();
            let closed = match tokens.next() {
                Some("closed") => true,
                Some("open") => false,
                other => {
                    return Err(Error::config(format!(
                        "scheme line {}: expected 'closed' or 'open', found {:?}",
                        no + 1,
                        other.unwrap_or("")
                    )))
                }
            };
            let indices = tokens
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::config(format!("scheme line {}: {e}", no + 1)))?;
            boundaries.push(Boundary { indices, closed });
        }
        if let Some(m) = expected {
            if boundaries.len() != m {
                return Err(Error::config(format!("scheme has {} boundaries, expected {m}", boundaries.len())));
            }
        }
        Self::new(boundaries, n_points)
    }

    pub fn load(path: &Path, n_points: usize, expected: Option<usize>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, n_points, expected)
    }

    /// The bundled 15-boundary scheme for 98-point faces.
    pub fn wflw98() -> Self {
        Self::parse(include_str!("../data/wflw98_boundaries.txt"), WFLW_POINTS, Some(NUM_BOUNDARIES))
            .expect("bundled boundary scheme is valid")
    }

    pub fn len(&self) -> usize {
        self.boundaries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boundaries.is_empty()
    }

    /// Boundaries that contain `landmark`.
    pub fn owners(&self, landmark: usize) -> Vec<usize> {
        self.boundaries
            .iter()
            .enumerate()
            .filter(|(_, b)| b.indices.contains(&landmark))
            .map(|(m, _)| m)
            .collect()
    }

    /// Distinct landmark indices of boundary `m` in first-occurrence order.
    pub fn unique_indices(&self, m: usize) -> Vec<usize> {
        let mut seen = Vec::new();
        for &i in &self.boundaries[m].indices {
            if !seen.contains(&i) {
                seen.push(i);
            }
        }
        seen
    }
}

/// Squared distance from `(px, py)` to the segment `a`–`b`.
pub fn segment_distance2(px: f64, py: f64, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a.x + t * dx, a.y + t * dy);
    (px - cx).powi(2) + (py - cy).powi(2)
}

/// Rasterizes each boundary polyline as a Gaussian of the pixel's distance
/// to the polyline, peak-normalised to 1. Boundaries with an invalid
/// landmark yield all-zero maps.
pub fn rasterize_grid_boundaries(points: &[Point], valid: &[bool], scheme: &BoundaryScheme, height: usize, width: usize, g: &GaussianParams) -> Result<HeatmapStack> {
    if scheme.is_empty() {
        return Err(Error::invalid("boundary scheme is empty"));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid(format!("non-positive resolution {height}x{width}")));
    }
    if points.len() < scheme.n_points {
        return Err(Error::invalid(format!(
            "sample has {} landmarks, scheme expects {}",
            points.len(),
            scheme.n_points
        )));
    }
    g.validate()?;
    let mut out = Stack::zeros(scheme.len(), height, width);
    for (m, boundary) in scheme.boundaries.iter().enumerate() {
        let usable = boundary.indices.iter().all(|&i| {
            valid.get(i).copied().unwrap_or(true) && points[i].x.is_finite() && points[i].y.is_finite()
        });
        if !usable {
            continue;
        }
        let segments: Vec<(Point, Point)> = boundary.segments().iter().map(|&(i, j)| (points[i], points[j])).collect();
        render(out.map_mut(m), width, g, |x, y| {
            segments.iter().map(|&(a, b)| segment_distance2(x, y, a, b)).fold(f64::INFINITY, f64::min)
        });
    }
    Ok(out)
}

/// Rasterizes the boundary heatmaps of a sample given in input-frame pixels.
pub fn rasterize_boundaries(sample: &LandmarkSet, scheme: &BoundaryScheme, mapping: &GridMapping, g: &GaussianParams) -> Result<HeatmapStack> {
    let grid: Vec<Point> = sample.points.iter().map(|&p| mapping.to_grid(p)).collect();
    rasterize_grid_boundaries(&grid, &sample.valid, scheme, mapping.height, mapping.width, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Attributes, BBox};

    fn pixel(stack: &Stack, c: usize, x: usize, y: usize) -> f64 {
        stack.get(c, y, x)
    }

    #[test]
    fn peak_at_grid_centre_is_one() {
        let s = encode_grid_points(&[Point::new(20.0, 30.0)], &[true], 64, 64, &GaussianParams::default()).unwrap();
        assert_eq!(pixel(&s, 0, 20, 30), 1.0);
        assert_eq!(s.data().iter().copied().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn neighbour_value() {
        let s = encode_grid_points(&[Point::new(10.0, 10.0)], &[true], 64, 64, &GaussianParams::default()).unwrap();
        let expected = (-1.0f64 / 4.5).exp();
        assert!((pixel(&s, 0, 11, 10) - expected).abs() < 1e-15);
        assert!((expected - 0.8007).abs() < 1e-4);
        // outside 3σ = 4.5 px
        assert_eq!(pixel(&s, 0, 15, 10), 0.0);
        assert!(pixel(&s, 0, 14, 10) > 0.0);
    }

    #[test]
    fn invalid_and_off_grid_are_zero() {
        let pts = [Point::new(10.0, 10.0), Point::new(70.0, 10.0), Point::new(10.0, 10.0)];
        let s = encode_grid_points(&pts, &[true, true, false], 64, 64, &GaussianParams::default()).unwrap();
        assert!(s.map(1).iter().all(|&v| v == 0.0));
        assert!(s.map(2).iter().all(|&v| v == 0.0));
        assert!(encode_grid_points(&pts, &[], 0, 64, &GaussianParams::default()).is_err());
    }

    #[test]
    fn subpixel_landmark_peak_normalised() {
        let s = encode_grid_points(&[Point::new(10.3, 20.6)], &[true], 64, 64, &GaussianParams::default()).unwrap();
        assert_eq!(s.data().iter().copied().fold(0.0, f64::max), 1.0);
        assert!(s.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn quarter_pixel_rule() {
        let mut m = vec![0.0; 64 * 64];
        m[10 * 64 + 10] = 1.0;
        m[10 * 64 + 11] = 0.9;
        m[10 * 64 + 9] = 0.5;
        let p = decode_heatmap(&m, 64, 64, TieRule::default()).unwrap();
        assert_eq!(p, Point::new(10.25, 10.0));
    }

    #[test]
    fn symmetric_peak_ties() {
        let mut m = vec![0.0; 9 * 9];
        m[4 * 9 + 4] = 1.0;
        for i in [3 * 9 + 4, 5 * 9 + 4, 4 * 9 + 3, 4 * 9 + 5] {
            m[i] = 0.7;
        }
        // smallest neighbour is the one above: (row 3, col 4)
        assert_eq!(decode_heatmap(&m, 9, 9, TieRule::Lexicographic).unwrap(), Point::new(4.0, 3.75));
        assert_eq!(decode_heatmap(&m, 9, 9, TieRule::HoldOnSymmetric).unwrap(), Point::new(4.0, 4.0));
        // right and below tie without an opposing partner: lexicographic in both modes
        m[3 * 9 + 4] = 0.1;
        m[4 * 9 + 3] = 0.1;
        assert_eq!(decode_heatmap(&m, 9, 9, TieRule::HoldOnSymmetric).unwrap(), Point::new(4.25, 4.0));
    }

    #[test]
    fn constant_map_resolves_to_origin() {
        let m = vec![0.3; 16];
        assert_eq!(decode_heatmap(&m, 4, 4, TieRule::Lexicographic).unwrap(), Point::new(0.25, 0.0));
        assert!(decode_heatmap(&m[..4], 2, 2, TieRule::Lexicographic).is_err());
    }

    #[test]
    fn mapping_roundtrip() {
        let m = GridMapping::default();
        let p = Point::new(101.0, 37.5);
        let back = m.to_input(m.to_grid(p));
        assert!((back.x - p.x).abs() < 1e-12 && (back.y - p.y).abs() < 1e-12);
        assert_eq!(m.to_grid(Point::new(1.5, 1.5)), Point::new(0.0, 0.0));
    }

    #[test]
    fn degenerate_segment_matches_landmark_encoding() {
        let p = Point::new(21.4, 33.9);
        let scheme = BoundaryScheme::new(vec![Boundary { indices: vec![0, 1], closed: false }], 2).unwrap();
        let g = GaussianParams::default();
        let b = rasterize_grid_boundaries(&[p, p], &[true, true], &scheme, 64, 64, &g).unwrap();
        let l = encode_grid_points(&[p], &[true], 64, 64, &g).unwrap();
        assert_eq!(b.map(0), l.map(0));
    }

    #[test]
    fn horizontal_line_is_symmetric_about_its_row() {
        let pts = [Point::new(10.0, 30.0), Point::new(20.0, 30.0), Point::new(35.0, 30.0)];
        let scheme = BoundaryScheme::new(vec![Boundary { indices: vec![0, 1, 2], closed: false }], 3).unwrap();
        let s = rasterize_grid_boundaries(&pts, &[true; 3], &scheme, 64, 64, &GaussianParams::default()).unwrap();
        for d in 1..10 {
            for x in 0..64 {
                assert_eq!(s.get(0, 30 - d, x), s.get(0, 30 + d, x));
            }
        }
        assert_eq!(s.get(0, 30, 15), 1.0);
    }

    #[test]
    fn invalid_landmark_blanks_its_boundary() {
        let pts = [Point::new(10.0, 30.0), Point::new(20.0, 30.0), Point::new(35.0, 40.0)];
        let scheme = BoundaryScheme::new(
            vec![Boundary { indices: vec![0, 1], closed: false }, Boundary { indices: vec![1, 2], closed: false }],
            3,
        )
        .unwrap();
        let s = rasterize_grid_boundaries(&pts, &[true, true, false], &scheme, 64, 64, &GaussianParams::default()).unwrap();
        assert!(s.map(0).iter().any(|&v| v > 0.0));
        assert!(s.map(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn closed_boundary_adds_closing_edge() {
        let b = Boundary { indices: vec![3, 4, 5], closed: true };
        assert_eq!(b.segments(), vec![(3, 4), (4, 5), (5, 3)]);
        let open = Boundary { indices: vec![3, 4, 5], closed: false };
        assert_eq!(open.segments().len(), 2);
    }

    #[test]
    fn scheme_parsing_and_validation() {
        let s = BoundaryScheme::parse("closed 0 1 2\nopen 2 3 # tail\n", 4, Some(2)).unwrap();
        assert!(s.boundaries[0].closed);
        assert_eq!(s.boundaries[1].indices, vec![2, 3]);
        assert!(BoundaryScheme::parse("open 0 1\n", 4, Some(15)).is_err());
        assert!(BoundaryScheme::parse("open 0 9\n", 4, None).is_err());
        assert!(BoundaryScheme::parse("open 0\n", 4, None).is_err());
        assert!(BoundaryScheme::parse("loop 0 1\n", 4, None).is_err());
        assert!(BoundaryScheme::parse("", 4, None).is_err());
    }

    #[test]
    fn bundled_scheme_shape() {
        let s = BoundaryScheme::wflw98();
        assert_eq!(s.len(), 15);
        assert_eq!(s.boundaries[0].indices.len(), 33);
        assert!(s.owners(96).is_empty());
        assert_eq!(s.owners(60), vec![7, 8]);
    }

    #[test]
    fn input_space_encoding_uses_mapping() {
        let mapping = GridMapping::default();
        let sample = LandmarkSet::new(vec![Point::new(41.5, 81.5)], BBox::new(0.0, 0.0, 256.0, 256.0), Attributes::default(), "");
        let s = encode_landmarks(&sample, &mapping, &GaussianParams::default()).unwrap();
        assert_eq!(s.get(0, 20, 10), 1.0);
        let back = decode_to_input(&s, &mapping, TieRule::default()).unwrap();
        assert_eq!(back[0], Point::new(41.5, 81.5));
    }
}
