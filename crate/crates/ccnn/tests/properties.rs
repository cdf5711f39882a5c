use ccnn::autodiff::Parameterized;
use ccnn::conv::{conv1d_direct, conv1d_fft, conv2d_fft};
use ccnn::data::{downsample, from_sequence, random_permutation, to_sequence, Dataset, DatasetMeta};
use ccnn::kernelgen::{apply_gaussian_mask, CoordinateGrid, GeneratorConfig, KernelGenerator};
use ccnn::model::{Ccnn, CcnnConfig};
use ccnn::Tensor;
use proptest::prelude::*;

fn tensor(shape: &[usize], values: &[f64]) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| values[i % values.len()])
}

fn images(n: usize, h: usize, w: usize, values: &[f32]) -> Dataset {
    let x = Tensor::from_fn(&[n, 1, h, w], |i| values[i % values.len()]);
    let meta = DatasetMeta {
        name: "p".into(),
        resolution: vec![h as f64, w as f64],
        split: "test".into(),
        n_classes: 10,
    };
    Dataset::new(x, vec![0; n], meta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn causal_outputs_ignore_the_future(
        len in 4usize..40,
        t0_frac in 0.0f64..1.0,
        xs in prop::collection::vec(-3.0f64..3.0, 40),
        ks in prop::collection::vec(-3.0f64..3.0, 40),
        bump in 0.5f64..10.0,
    ) {
        let t0 = ((len as f64 * t0_frac) as usize).min(len - 1);
        let x = tensor(&[1, 2, len], &xs);
        let k = tensor(&[2, 2, len], &ks);
        let mut x2 = x.clone();
        x2.data_mut()[t0] += bump;
        let (a, b) = (conv1d_direct(&x, &k, true).unwrap(), conv1d_direct(&x2, &k, true).unwrap());
        for ch in 0..2 {
            for t in 0..t0 {
                prop_assert_eq!(a.data()[ch * len + t], b.data()[ch * len + t]);
            }
        }
        // The FFT path is exact up to transform round-off.
        let (a, b) = (conv1d_fft(&x, &k, true).unwrap(), conv1d_fft(&x2, &k, true).unwrap());
        for ch in 0..2 {
            for t in 0..t0 {
                prop_assert!((a.data()[ch * len + t] - b.data()[ch * len + t]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn convolution_is_linear(
        len in 3usize..30,
        xs in prop::collection::vec(-2.0f64..2.0, 30),
        ys in prop::collection::vec(-2.0f64..2.0, 30),
        ks in prop::collection::vec(-2.0f64..2.0, 30),
        alpha in -3.0f64..3.0,
        beta in -3.0f64..3.0,
    ) {
        let side = len | 1;
        let x1 = tensor(&[1, 1, side, side], &xs);
        let x2 = tensor(&[1, 1, side, side], &ys);
        let k = tensor(&[1, 1, 3, 3], &ks);
        let mix = Tensor::from_fn(x1.shape(), |i| alpha * x1.data()[i] + beta * x2.data()[i]);
        let lhs = conv2d_fft(&mix, &k).unwrap();
        let (y1, y2) = (conv2d_fft(&x1, &k).unwrap(), conv2d_fft(&x2, &k).unwrap());
        let rhs = Tensor::from_fn(y1.shape(), |i| alpha * y1.data()[i] + beta * y2.data()[i]);
        let scale = rhs.max_abs().max(1.0);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() / scale <= 1e-10);

        let x1 = tensor(&[1, 1, len], &xs);
        let x2 = tensor(&[1, 1, len], &ys);
        let k = tensor(&[1, 1, len], &ks);
        let mix = Tensor::from_fn(x1.shape(), |i| alpha * x1.data()[i] + beta * x2.data()[i]);
        let lhs = conv1d_fft(&mix, &k, true).unwrap();
        let (y1, y2) = (conv1d_fft(&x1, &k, true).unwrap(), conv1d_fft(&x2, &k, true).unwrap());
        let rhs = Tensor::from_fn(y1.shape(), |i| alpha * y1.data()[i] + beta * y2.data()[i]);
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() / rhs.max_abs().max(1.0) <= 1e-10);
    }

    #[test]
    fn mask_decays_away_from_its_center(
        mu in -1.0f64..1.0,
        sigma in 0.05f64..3.0,
        n in 5usize..60,
    ) {
        let grid = CoordinateGrid::<f64>::regular(1, &[n], true).unwrap();
        let ones = Tensor::ones(&[n, 1]);
        let m = apply_gaussian_mask(&ones, &grid, &[mu], &[sigma]).unwrap();
        let mut pairs: Vec<(f64, f64)> = grid.points().data().iter().map(|c| (c - mu).abs()).zip(m.data().iter().copied()).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pairs.windows(2) {
            prop_assert!(w[1].1 <= w[0].1 + 1e-15);
        }
    }

    #[test]
    fn mask_decays_per_axis_in_2d(
        mu0 in -1.0f64..1.0,
        mu1 in -1.0f64..1.0,
        s0 in 0.1f64..3.0,
        s1 in 0.1f64..3.0,
    ) {
        let n = 9;
        let grid = CoordinateGrid::<f64>::regular(2, &[n, n], false).unwrap();
        let m = apply_gaussian_mask(&Tensor::ones(&[n * n, 1]), &grid, &[mu0, mu1], &[s0, s1]).unwrap();
        let p = grid.points().data();
        for row in 0..n {
            let mut line: Vec<(f64, f64)> = (0..n).map(|c| {
                let i = row * n + c;
                ((p[2 * i + 1] - mu1).abs(), m.data()[i])
            }).collect();
            line.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in line.windows(2) {
                prop_assert!(w[1].1 <= w[0].1 + 1e-15);
            }
        }
    }

    #[test]
    fn flatten_round_trip_is_exact(
        n in 1usize..4,
        h in 1usize..9,
        w in 1usize..9,
        values in prop::collection::vec(-5.0f32..5.0, 1..50),
    ) {
        let d = images(n, h, w, &values);
        let back = from_sequence(&to_sequence(&d, None).unwrap(), h, w).unwrap();
        prop_assert_eq!(back.inputs(), d.inputs());
        prop_assert_eq!(&back.meta.resolution, &d.meta.resolution);
    }

    #[test]
    fn downsample_commutes_with_flatten(
        side_blocks in 1usize..6,
        factor in 1usize..4,
        values in prop::collection::vec(-5.0f32..5.0, 1..80),
    ) {
        let side = side_blocks * factor;
        let d = images(2, side, side, &values);
        let a = to_sequence(&downsample(&d, factor).unwrap(), None).unwrap();
        // flatten first, then average the pixels of each block by index
        let flat = to_sequence(&d, None).unwrap();
        let o = side / factor;
        for (img, row) in flat.inputs().data().chunks(side * side).enumerate() {
            for bi in 0..o {
                for bj in 0..o {
                    let mut s = 0.0f32;
                    for u in 0..factor {
                        for v in 0..factor {
                            s += row[(bi * factor + u) * side + bj * factor + v];
                        }
                    }
                    let want = s / (factor * factor) as f32;
                    let got = a.inputs().data()[img * o * o + bi * o + bj];
                    prop_assert!((got - want).abs() <= 1e-5);
                }
            }
        }
    }

    #[test]
    fn nested_grids_share_kernel_values(k in 2usize..100, seed in 0u64..1000) {
        let g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 8, 3, 20.0), seed).unwrap();
        let coarse = g.generate_masked(&CoordinateGrid::regular(1, &[k], true).unwrap()).unwrap();
        let fine = g.generate_masked(&CoordinateGrid::regular(1, &[2 * k - 1], true).unwrap()).unwrap();
        for i in 0..k {
            for c in 0..3 {
                prop_assert_eq!(coarse.data()[i * 3 + c], fine.data()[2 * i * 3 + c]);
            }
        }
    }
}

#[test]
fn permutation_is_fixed_per_seed() {
    assert_eq!(random_permutation(784, 1234), random_permutation(784, 1234));
    assert_ne!(random_permutation(784, 1234), random_permutation(784, 1235));
    let d = images(3, 4, 4, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let p = random_permutation(16, 9);
    let a = to_sequence(&d, Some(&p)).unwrap();
    let b = to_sequence(&d, Some(&p)).unwrap();
    assert_eq!(a.inputs(), b.inputs());
    assert!(to_sequence(&d, Some(&[0; 16])).is_err());
}

#[test]
fn parameter_count_ignores_kernel_length() {
    let counts: Vec<usize> = [16, 784, 16000]
        .iter()
        .map(|&k| Ccnn::<f32>::build(CcnnConfig::new(2, 8, &[k], 10)).unwrap().param_count())
        .collect();
    assert!(counts.windows(2).all(|w| w[0] == w[1]), "{counts:?}");
}
