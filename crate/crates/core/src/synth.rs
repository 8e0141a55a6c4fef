//! Procedural test data: 98-point faces and low-pass noise maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Affine2, Attributes, BBox, FlipPairTable, LandmarkSet, Point, NUM_ATTRIBUTES, WFLW_POINTS};
use crate::shift::{blur_cols, blur_rows, BlurKernel, Padding};
use crate::tensor::Stack;

/// Frame size the template is laid out in.
pub const FRAME: f64 = 256.0;

/// A frontal 98-point face in a 256² frame, mirror-symmetric under
/// `x -> 255 - x` with the bundled WFLW flip table.
pub fn template_face() -> Vec<Point> {
    let mut pts = vec![None; WFLW_POINTS];
    let mut put = |i: usize, x: f64, y: f64| pts[i] = Some(Point::new(x, y));

    for k in 0..=16 {
        let phi = std::f64::consts::PI * (1.0 - k as f64 / 32.0);
        put(k, 127.5 + 80.0 * phi.cos(), 110.0 + 100.0 * phi.sin());
    }
    for j in 0..5 {
        let s = (std::f64::consts::PI * j as f64 / 4.0).sin();
        put(33 + j, 62.0 + 12.5 * j as f64, 90.0 - 12.0 * s);
    }
    for (n, j) in (1..=4).rev().enumerate() {
        let s = (std::f64::consts::PI * j as f64 / 4.0).sin();
        put(38 + n, 62.0 + 12.5 * j as f64 - 3.0, 97.0 - 6.0 * s);
    }
    for (n, y) in [105.0, 118.0, 131.0, 144.0].into_iter().enumerate() {
        put(51 + n, 127.5, y);
    }
    put(55, 110.0, 152.0);
    put(56, 118.0, 156.0);
    put(57, 127.5, 158.0);
    let eye = [(70.0, 115.0), (79.0, 109.0), (88.0, 107.0), (97.0, 109.0), (106.0, 115.0), (97.0, 120.0), (88.0, 122.0), (79.0, 120.0)];
    for (n, (x, y)) in eye.into_iter().enumerate() {
        put(60 + n, x, y);
    }
    put(96, 88.0, 115.0);
    put(76, 95.0, 180.0);
    put(77, 105.0, 173.0);
    put(78, 116.0, 169.0);
    put(79, 127.5, 171.0);
    put(87, 105.0, 188.0);
    put(86, 116.0, 192.0);
    put(85, 127.5, 193.0);
    put(88, 101.0, 180.0);
    put(89, 113.0, 177.0);
    put(90, 127.5, 178.0);
    put(95, 113.0, 184.0);
    put(94, 127.5, 185.0);

    let table = FlipPairTable::wflw98();
    for i in 0..WFLW_POINTS {
        if pts[i].is_none() {
            let src = pts[table.mirror_of(i)].expect("template defines one side of every pair");
            pts[i] = Some(Point::new(FRAME - 1.0 - src.x, src.y));
        }
    }
    pts.into_iter().map(|p| p.expect("every landmark placed")).collect()
}

fn bbox_of(points: &[Point]) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    BBox::new(x0.floor(), y0.floor(), x1.ceil() + 1.0, y1.ceil() + 1.0)
}

/// Template face under a random similarity transform with per-point jitter
/// and random attribute flags.
pub fn random_face(rng: &mut impl Rng, image_id: impl Into<String>) -> LandmarkSet {
    let centre = Point::new(FRAME / 2.0, FRAME / 2.0);
    let scale = rng.gen_range(0.85..1.1);
    let linear = Affine2::scaling(scale, scale).compose(&Affine2::rotation(rng.gen_range(-15.0..15.0)));
    let t = Affine2::translation(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)).compose(&Affine2::about(centre, &linear));
    let points: Vec<Point> = template_face()
        .into_iter()
        .map(|p| {
            let q = t.apply(p);
            Point::new(q.x + rng.gen_range(-1.5..1.5), q.y + rng.gen_range(-1.5..1.5))
        })
        .collect();
    let mut attributes = Attributes::default();
    for c in 0..NUM_ATTRIBUTES {
        attributes.0[c] = rng.gen_bool(0.3);
    }
    let bbox = bbox_of(&points);
    LandmarkSet::new(points, bbox, attributes, image_id)
}

/// `n` random faces from one seed.
pub fn faces(seed: u64, n: usize) -> Vec<LandmarkSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| random_face(&mut rng, format!("synthetic/{seed}_{i}.png"))).collect()
}

/// Uniform noise smoothed by `passes` circular binomial blurs per axis.
pub fn lowpass_noise(rng: &mut impl Rng, channels: usize, height: usize, width: usize, passes: usize) -> Stack {
    let mut f = Stack::from_fn(channels, height, width, |_, _, _| rng.gen::<f64>());
    let k = BlurKernel::new(3).expect("size 3 is supported");
    for _ in 0..passes {
        f = blur_cols(&blur_rows(&f, &k, Padding::Circular), &k, Padding::Circular);
    }
    f
}
