use propnet::codec::{
    decode_heatmap, encode_grid_points, encode_landmarks, rasterize_boundaries, rasterize_grid_boundaries, Boundary, BoundaryScheme, GaussianParams,
    GridMapping, TieRule,
};
use propnet::geometry::{apply_augment, AugmentDraw, Attributes, BBox, FlipPairTable, LandmarkSet, Point};
use propnet::synth;
use proptest::prelude::*;

/// Direct evaluation of a truncated, peak-normalised Gaussian.
fn oracle_map(p: Point, h: usize, w: usize, sigma: f64, truncate: f64) -> Vec<f64> {
    let mut m = vec![0.0; h * w];
    for row in 0..h {
        for col in 0..w {
            let d = ((col as f64 - p.x).powi(2) + (row as f64 - p.y).powi(2)).sqrt();
            if d <= sigma * truncate {
                m[row * w + col] = (-(d * d) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let peak = m.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        m.iter_mut().for_each(|v| *v /= peak);
    }
    m
}

proptest! {
    #[test]
    fn encoding_matches_direct_gaussian(x in -0.5f64..63.49, y in -0.5f64..63.49, sigma in 0.8f64..3.0) {
        let g = GaussianParams::with_sigma(sigma);
        let s = encode_grid_points(&[Point::new(x, y)], &[true], 64, 64, &g).unwrap();
        let expected = oracle_map(Point::new(x, y), 64, 64, sigma, 3.0);
        for (a, b) in s.map(0).iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicated_points_encode_identically(x in 0.0f64..63.0, y in 0.0f64..63.0) {
        let p = Point::new(x, y);
        let s = encode_grid_points(&[p, Point::new(10.0, 10.0), p], &[true; 3], 64, 64, &GaussianParams::default()).unwrap();
        prop_assert_eq!(s.map(0), s.map(2));
    }

    #[test]
    fn decoding_stays_within_a_quarter_pixel_of_an_integer_peak(x in 1usize..63, y in 1usize..63) {
        let s = encode_grid_points(&[Point::new(x as f64, y as f64)], &[true], 64, 64, &GaussianParams::default()).unwrap();
        let d = decode_heatmap(s.map(0), 64, 64, TieRule::default()).unwrap();
        prop_assert_eq!(d, Point::new(x as f64, y as f64));
        let lex = decode_heatmap(s.map(0), 64, 64, TieRule::Lexicographic).unwrap();
        prop_assert!(lex.distance(Point::new(x as f64, y as f64)) <= 0.25);
    }

    #[test]
    fn decoding_error_is_bounded_off_grid(x in 1.0f64..62.0, y in 1.0f64..62.0) {
        let s = encode_grid_points(&[Point::new(x, y)], &[true], 64, 64, &GaussianParams::default()).unwrap();
        let d = decode_heatmap(s.map(0), 64, 64, TieRule::default()).unwrap();
        // rounding error of at most half a pixel per axis, minus any helpful quarter step
        prop_assert!((d.x - x).abs() <= 0.5 + 1e-12 && (d.y - y).abs() <= 0.5 + 1e-12);
    }

    #[test]
    fn closed_boundaries_ignore_the_starting_index(start in 0usize..5, seed in 0u64..200) {
        let pts = synth::faces(seed, 1).remove(0).points;
        let ring = vec![60, 61, 62, 63, 64, 65, 66, 67];
        let mut rotated = ring.clone();
        rotated.rotate_left(start);
        let a = BoundaryScheme::new(vec![Boundary { indices: ring, closed: true }], 98).unwrap();
        let b = BoundaryScheme::new(vec![Boundary { indices: rotated, closed: true }], 98).unwrap();
        let m = GridMapping::default();
        let grid: Vec<Point> = pts.iter().map(|&p| m.to_grid(p)).collect();
        let g = GaussianParams::default();
        prop_assert_eq!(
            rasterize_grid_boundaries(&grid, &[], &a, 64, 64, &g).unwrap(),
            rasterize_grid_boundaries(&grid, &[], &b, 64, 64, &g).unwrap()
        );
    }
}

/// Boundary whose index sequence is the mirror of boundary `m`, read in
/// either direction.
fn mirror_boundary(scheme: &BoundaryScheme, table: &FlipPairTable, m: usize) -> usize {
    let mirrored: Vec<usize> = scheme.boundaries[m].indices.iter().map(|&i| table.mirror_of(i)).collect();
    let reversed: Vec<usize> = mirrored.iter().rev().copied().collect();
    scheme
        .boundaries
        .iter()
        .position(|b| b.indices == mirrored || b.indices == reversed)
        .unwrap_or_else(|| panic!("boundary {m} has no mirror image in the scheme"))
}

#[test]
fn rasterization_commutes_with_horizontal_flip() {
    let scheme = BoundaryScheme::wflw98();
    let table = FlipPairTable::wflw98();
    let mapping = GridMapping::default();
    let g = GaussianParams::default();
    let flip = AugmentDraw { rotation_deg: 0.0, scale: 1.0, shift: (0, 0), flip: true };
    for s in synth::faces(11, 5) {
        let flipped = apply_augment(&s, &flip, &table, 256);
        let a = rasterize_boundaries(&s, &scheme, &mapping, &g).unwrap();
        let b = rasterize_boundaries(&flipped, &scheme, &mapping, &g).unwrap();
        for m in 0..scheme.len() {
            let mm = mirror_boundary(&scheme, &table, m);
            for y in 0..64 {
                for x in 0..64 {
                    assert!((a.get(m, y, x) - b.get(mm, y, 63 - x)).abs() < 1e-9, "boundary {m} at ({x}, {y})");
                }
            }
        }
    }
}

#[test]
fn landmark_encoding_commutes_with_horizontal_flip() {
    let table = FlipPairTable::wflw98();
    let mapping = GridMapping::default();
    let g = GaussianParams::default();
    let flip = AugmentDraw { rotation_deg: 0.0, scale: 1.0, shift: (0, 0), flip: true };
    let s = synth::faces(4, 1).remove(0);
    let a = encode_landmarks(&s, &mapping, &g).unwrap();
    let b = encode_landmarks(&apply_augment(&s, &flip, &table, 256), &mapping, &g).unwrap();
    for k in 0..98 {
        let kk = table.mirror_of(k);
        for y in 0..64 {
            for x in 0..64 {
                assert!((a.get(k, y, x) - b.get(kk, y, 63 - x)).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn invalid_landmarks_blank_their_maps() {
    let mut s = LandmarkSet::new(synth::template_face(), BBox::new(0.0, 0.0, 256.0, 256.0), Attributes::default(), "t");
    s.valid[0] = false;
    let scheme = BoundaryScheme::wflw98();
    let lm = encode_landmarks(&s, &GridMapping::default(), &GaussianParams::default()).unwrap();
    assert!(lm.map(0).iter().all(|&v| v == 0.0));
    let bd = rasterize_boundaries(&s, &scheme, &GridMapping::default(), &GaussianParams::default()).unwrap();
    assert!(bd.map(0).iter().all(|&v| v == 0.0));
    assert!(bd.map(1).contains(&1.0));
}

#[test]
fn single_segment_matches_distance_oracle() {
    let scheme = BoundaryScheme::new(vec![Boundary { indices: vec![0, 1], closed: false }], 2).unwrap();
    let (a, b) = (Point::new(10.3, 20.1), Point::new(40.7, 25.9));
    let g = GaussianParams::default();
    let out = rasterize_grid_boundaries(&[a, b], &[true, true], &scheme, 64, 64, &g).unwrap();
    // brute force: sample the segment densely and take the closest sample
    let samples: Vec<Point> = (0..=20000).map(|i| {
        let t = i as f64 / 20000.0;
        Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
    }).collect();
    for y in 0..64 {
        for x in 0..64 {
            let p = Point::new(x as f64, y as f64);
            let d = samples.iter().map(|q| q.distance(p)).fold(f64::INFINITY, f64::min);
            let expected = if d <= 4.5 { (-(d * d) / 4.5).exp() } else { 0.0 };
            assert!((out.get(0, y, x) - expected).abs() < 1e-3, "({x}, {y})");
        }
    }
}
