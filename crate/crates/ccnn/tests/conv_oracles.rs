//! Convolution paths against nested-loop oracles.

use ccnn::autodiff::{Param, Tape};
use ccnn::conv::{conv1d_direct, conv1d_fft, conv2d_direct, conv2d_fft, depthwise_conv, ConvLayerSpec, ConvMode, SeparableConv};
use ccnn::kernelgen::{CoordinateGrid, GeneratorConfig, KernelGenerator};
use ccnn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn normal(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
}

/// y[b, o, t] = sum_c sum_tau k[o, c, Lk - 1 - tau] x[b, c, t - tau]
fn causal_oracle(x: &Tensor<f64>, k: &Tensor<f64>) -> Vec<f64> {
    let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co, lk) = (k.shape()[0], k.shape()[2]);
    let mut y = vec![0.0; b * co * l];
    for bi in 0..b {
        for o in 0..co {
            for t in 0..l {
                let mut acc = 0.0;
                for ci in 0..c {
                    for tau in 0..lk.min(t + 1) {
                        acc += k.data()[(o * c + ci) * lk + lk - 1 - tau] * x.data()[(bi * c + ci) * l + t - tau];
                    }
                }
                y[(bi * co + o) * l + t] = acc;
            }
        }
    }
    y
}

/// Same-size centered 2D convolution with zero padding.
fn centered_oracle(x: &Tensor<f64>, k: &Tensor<f64>) -> Vec<f64> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (ch, cw) = (kh as isize / 2, kw as isize / 2);
    let mut y = vec![0.0; b * co * h * w];
    for bi in 0..b {
        for o in 0..co {
            for p in 0..h as isize {
                for q in 0..w as isize {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for u in 0..kh as isize {
                            for v in 0..kw as isize {
                                let (r, s) = (p + ch - u, q + cw - v);
                                if r < 0 || s < 0 || r >= h as isize || s >= w as isize {
                                    continue;
                                }
                                let kv = k.data()[((o * c + ci) * kh + u as usize) * kw + v as usize];
                                acc += kv * x.data()[((bi * c + ci) * h + r as usize) * w + s as usize];
                            }
                        }
                    }
                    y[((bi * co + o) * h + p as usize) * w + q as usize] = acc;
                }
            }
        }
    }
    y
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn causal_1d_matches_nested_loops() {
    let x = normal(&[1, 2, 7], 1);
    let k = normal(&[3, 2, 7], 2);
    let oracle = causal_oracle(&x, &k);
    assert!(max_diff(conv1d_direct(&x, &k, true).unwrap().data(), &oracle) <= 1e-12);
    assert!(max_diff(conv1d_fft(&x, &k, true).unwrap().data(), &oracle) <= 1e-12);
    let short = normal(&[3, 2, 3], 3);
    assert!(max_diff(conv1d_fft(&x, &short, true).unwrap().data(), &causal_oracle(&x, &short)) <= 1e-12);
}

#[test]
fn centered_2d_matches_nested_loops() {
    let x = normal(&[2, 2, 9, 9], 4);
    let k = normal(&[3, 2, 5, 5], 5);
    let oracle = centered_oracle(&x, &k);
    assert!(max_diff(conv2d_direct(&x, &k).unwrap().data(), &oracle) <= 1e-12);
    assert!(max_diff(conv2d_fft(&x, &k).unwrap().data(), &oracle) <= 1e-12);
}

#[test]
fn centered_2d_identity_kernel() {
    let x = normal(&[1, 1, 6, 8], 6);
    let mut k = Tensor::<f64>::zeros(&[1, 1, 5, 5]);
    k.data_mut()[12] = 1.0;
    assert!(conv2d_fft(&x, &k).unwrap().max_abs_diff(&x).unwrap() <= 1e-12);
}

#[test]
fn fft_and_direct_agree_in_32_bit() {
    for len in [16, 257, 1024] {
        let x = normal(&[1, 2, len], len as u64).cast::<f32>();
        let k = normal(&[2, 2, len], len as u64 + 1).cast::<f32>();
        let d = conv1d_fft(&x, &k, true).unwrap().max_abs_diff(&conv1d_direct(&x, &k, true).unwrap()).unwrap();
        // relative to the output scale, which grows like sqrt(len)
        assert!(d <= 1e-4 * (len as f32).sqrt(), "len {len}: {d}");
    }
}

#[test]
fn fft_delta_reproduces_kernel() {
    let mut x = Tensor::<f64>::zeros(&[1, 1, 6]);
    x.data_mut()[0] = 1.0;
    let k = normal(&[1, 1, 6], 7);
    let y = conv1d_fft(&x, &k, true).unwrap();
    let reversed: Vec<f64> = k.data().iter().rev().copied().collect();
    assert!(max_diff(y.data(), &reversed) <= 1e-12);
}

#[test]
fn depthwise_is_per_channel_full_conv() {
    let x = normal(&[2, 3, 11], 8);
    let k = normal(&[3, 11], 9);
    let y = depthwise_conv(&x, &k, ConvMode::Causal, true).unwrap();
    for ch in 0..3 {
        let xs = Tensor::from_fn(&[2, 1, 11], |i| x.data()[((i / 11) * 3 + ch) * 11 + i % 11]);
        let ks = Tensor::new(vec![1, 1, 11], k.data()[ch * 11..(ch + 1) * 11].to_vec()).unwrap();
        let o = causal_oracle(&xs, &ks);
        for b in 0..2 {
            assert!(max_diff(&y.data()[(b * 3 + ch) * 11..(b * 3 + ch + 1) * 11], &o[b * 11..(b + 1) * 11]) <= 1e-12);
        }
    }
}

#[test]
fn separable_conv_is_channelwise_then_pointwise() {
    let (c_in, c_out, len) = (3, 4, 10);
    let spec = ConvLayerSpec::separable(1, c_in, c_out);
    let g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 8, c_in, 5.0), 1).unwrap();
    let w = normal(&[c_out, c_in], 10);
    let bias = normal(&[c_out], 11);
    let layer = SeparableConv::new(spec, g.clone(), Param::new("w", w.clone(), true), Param::new("b", bias.clone(), false)).unwrap();

    let x = normal(&[2, c_in, len], 12);
    let mut tape = Tape::new();
    let xv = tape.constant(x.channels_last().unwrap());
    let yv = layer.forward(&mut tape, xv, None).unwrap();
    let y = tape.value(yv).channels_first().unwrap();

    let grid = CoordinateGrid::regular(1, &[len], true).unwrap();
    let kern = g.generate_masked(&grid).unwrap().permute(&[1, 0]).unwrap();
    let mid = depthwise_conv(&x, &kern, ConvMode::Causal, false).unwrap();
    for b in 0..2 {
        for o in 0..c_out {
            for t in 0..len {
                let mut acc = bias.data()[o];
                for i in 0..c_in {
                    acc += w.data()[o * c_in + i] * mid.data()[(b * c_in + i) * len + t];
                }
                let got = y.data()[(b * c_out + o) * len + t];
                assert!((got - acc).abs() <= 1e-12, "{got} vs {acc}");
            }
        }
    }
}

#[test]
fn separable_identity_composition() {
    // A delta kernel at coordinate +1 with identity pointwise weights passes
    // the input through.
    let len = 9;
    let x = normal(&[1, 2, len], 13);
    let mut k = Tensor::<f64>::zeros(&[2, len]);
    k.data_mut()[len - 1] = 1.0;
    k.data_mut()[2 * len - 1] = 1.0;
    let y = depthwise_conv(&x, &k, ConvMode::Causal, true).unwrap();
    assert!(y.max_abs_diff(&x).unwrap() <= 1e-12);
}
