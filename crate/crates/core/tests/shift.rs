use propnet::shift::{
    add_coord_channels, blur_cols, blur_downsample, blur_downsample_padded, blur_rows, circular_shift, max_blur_pool, shift_consistency, subsample,
    BlurKernel, Padding,
};
use propnet::tensor::Stack;
use proptest::prelude::*;

fn stack_strategy(max: usize) -> impl Strategy<Value = Stack> {
    (1usize..3, 5usize..max, 5usize..max).prop_flat_map(|(c, h, w)| {
        prop::collection::vec(-1.0f64..1.0, c * h * w).prop_map(move |v| Stack::from_vec(c, h, w, v).unwrap())
    })
}

/// Reflect-pads one plane by `p` on every side, mirroring without repeating
/// the edge sample.
fn reflect_pad(plane: &[f64], h: usize, w: usize, p: usize) -> Vec<Vec<f64>> {
    let mirror = |i: isize, n: usize| -> usize {
        let mut i = i;
        let n = n as isize;
        while i < 0 || i >= n {
            if i < 0 {
                i = -i;
            }
            if i >= n {
                i = 2 * (n - 1) - i;
            }
        }
        i as usize
    };
    (0..h + 2 * p)
        .map(|y| (0..w + 2 * p).map(|x| plane[mirror(y as isize - p as isize, h) * w + mirror(x as isize - p as isize, w)]).collect())
        .collect()
}

/// Binomial coefficients of the given kernel size, normalised.
fn binomial(n: usize) -> Vec<f64> {
    let mut row = vec![1.0];
    for _ in 1..n {
        let mut next = vec![1.0; row.len() + 1];
        for i in 1..row.len() {
            next[i] = row[i - 1] + row[i];
        }
        row = next;
    }
    let s: f64 = row.iter().sum();
    row.into_iter().map(|v| v / s).collect()
}

proptest! {
    #[test]
    fn blur_downsample_matches_padded_convolution(f in stack_strategy(12), n in prop::sample::select(vec![2usize, 3, 5])) {
        let k = BlurKernel::new(n).unwrap();
        let out = blur_downsample(&f, &k).unwrap();
        let taps = binomial(n);
        let lead = (n - 1) / 2;
        let (c, h, w) = f.shape();
        for ch in 0..c {
            let padded = reflect_pad(f.map(ch), h, w, 4);
            for oy in 0..h.div_ceil(2) {
                for ox in 0..w.div_ceil(2) {
                    let mut acc = 0.0;
                    for i in 0..n {
                        for j in 0..n {
                            acc += taps[i] * taps[j] * padded[2 * oy + 4 - lead + i][2 * ox + 4 - lead + j];
                        }
                    }
                    prop_assert!((out.get(ch, oy, ox) - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn blur_is_separable(f in stack_strategy(12), n in prop::sample::select(vec![2usize, 3, 5]), circular in any::<bool>()) {
        let k = BlurKernel::new(n).unwrap();
        let pad = if circular { Padding::Circular } else { Padding::Reflect };
        let direct = blur_downsample_padded(&f, &k, pad).unwrap();
        let separated = subsample(&blur_cols(&blur_rows(&f, &k, pad), &k, pad), 2);
        prop_assert!(direct.max_abs_diff(&separated) < 1e-12);
    }

    #[test]
    fn coordinate_channels_keep_inputs_bit_identical(f in stack_strategy(10)) {
        let out = add_coord_channels(&f);
        prop_assert_eq!(out.channels(), f.channels() + 2);
        prop_assert_eq!(out.channel_range(0, f.channels()), f.clone());
        let (h, w) = f.dims();
        prop_assert_eq!(out.get(f.channels(), 0, 0), -1.0);
        prop_assert_eq!(out.get(f.channels(), h - 1, w - 1), 1.0);
        prop_assert_eq!(out.get(f.channels() + 1, h - 1, 0), 1.0);
    }

    #[test]
    fn circular_shifts_compose_and_invert(f in stack_strategy(10), dy in -7isize..7, dx in -7isize..7) {
        let back = circular_shift(&circular_shift(&f, dy, dx), -dy, -dx);
        prop_assert_eq!(back, f.clone());
        let twice = circular_shift(&circular_shift(&f, dy, 0), 0, dx);
        prop_assert_eq!(twice, circular_shift(&f, dy, dx));
    }

    #[test]
    fn max_blur_pool_dominates_blur(f in stack_strategy(12)) {
        let k = BlurKernel::new(3).unwrap();
        let a = max_blur_pool(&f, &k).unwrap();
        let b = blur_downsample(&f, &k).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x >= &(y - 1e-12)));
    }
}

#[test]
fn consistency_scores_constant_input_as_one() {
    let f = Stack::filled(1, 16, 16, 2.0);
    let k = BlurKernel::new(3).unwrap();
    let s = shift_consistency(|m: &Stack| blur_downsample_padded(m, &k, Padding::Circular), &f, 3).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
    let plain = shift_consistency(|m: &Stack| Ok(subsample(m, 2)), &f, 3).unwrap();
    assert!((plain - 1.0).abs() < 1e-12);
}

#[test]
fn even_shifts_commute_with_subsampling() {
    let f = Stack::from_fn(1, 16, 16, |_, y, x| ((y * 7 + x * 3) % 5) as f64);
    let s = shift_consistency(|m: &Stack| Ok(subsample(m, 2)), &f, 3).unwrap();
    // only the ±2 probes (4 of 12) are guaranteed to match exactly
    assert!(s < 1.0);
    let twice = circular_shift(&f, 2, 0);
    assert_eq!(subsample(&twice, 2), circular_shift(&subsample(&f, 2), 1, 0));
}
