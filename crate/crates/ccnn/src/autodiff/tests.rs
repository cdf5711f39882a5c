use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::conv::ConvMode;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central-difference check of `f` (a scalar graph of one leaf) at `x0`.
fn check_grad(x0: &Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Var) -> f64 {
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone());
    let loss = f(&mut tape, x);
    let g = tape.backward(loss).unwrap().wrt(x).unwrap().clone();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..x0.len() {
        let eval = |delta: f64| {
            let mut p = x0.clone();
            p.data_mut()[i] += delta;
            let mut tape = Tape::new();
            let x = tape.leaf(p);
            let l = f(&mut tape, x);
            tape.value(l).item()
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(fd, g.data()[i]));
    }
    worst
}

#[test]
fn matmul_small_cases() {
    let mut tape = Tape::new();
    let i2 = tape.constant(t(&[2, 2], &[1., 0., 0., 1.]));
    let m = tape.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let p = tape.matmul(i2, m).unwrap();
    assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);
    let a = tape.constant(t(&[1, 2], &[1., 2.]));
    let b = tape.constant(t(&[2, 1], &[3., 4.]));
    let p = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(p).data(), &[11.]);
    assert!(matches!(tape.matmul(a, a), Err(Error::Dimension { .. })));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (random(&[3, 4], &mut rng), random(&[4, 2], &mut rng));
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let p = tape.matmul(va, vb).unwrap();
    for i in 0..3 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..4 {
                s += a.data()[i * 4 + k] * b.data()[k * 2 + j];
            }
            assert!((tape.value(p).data()[i * 2 + j] - s).abs() <= 1e-12);
        }
    }
}

#[test]
fn elementwise_values() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(Tensor::zeros(&[1]));
    let (g, s, e) = (tape.gelu(z), tape.sin(z), tape.exp(z));
    assert_eq!(tape.value(g).item(), 0.0);
    assert_eq!(tape.value(s).item(), 0.0);
    assert_eq!(tape.value(e).item(), 1.0);
}

#[test]
fn gelu_derivative_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let x: f64 = rng.random_range(-4.0..4.0);
        let h = 1e-5;
        let fd = (ops::gelu(x + h) - ops::gelu(x - h)) / (2.0 * h);
        assert!(rel_err(fd, ops::gelu_grad(x)) <= 1e-6, "x={x}");
    }
}

#[test]
fn rejects_incompatible_broadcast() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::<f64>::zeros(&[2, 3]));
    let b = tape.constant(Tensor::<f64>::zeros(&[2]));
    assert!(matches!(tape.add(a, b), Err(Error::Dimension { .. })));
    let c = tape.constant(Tensor::<f64>::zeros(&[3]));
    assert!(tape.add(a, c).is_ok());
}

#[test]
fn layer_norm_cases() {
    let mut tape = Tape::new();
    let one = tape.constant(Tensor::ones(&[2]));
    let zero = tape.constant(Tensor::zeros(&[2]));
    let c = tape.constant(t(&[1, 2], &[5., 5.]));
    let y = tape.layer_norm(c, one, zero, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    let x = tape.constant(t(&[1, 2], &[1., 3.]));
    let y = tape.layer_norm(x, one, zero, 1e-12).unwrap();
    let d = tape.value(y).data();
    assert!((d[0] + 1.0).abs() < 1e-9 && (d[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[5, 7], &mut rng);
    let beta = random(&[7], &mut rng);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let g = tape.constant(Tensor::ones(&[7]));
    let b = tape.constant(beta.clone());
    let y = tape.layer_norm(xv, g, b, 1e-5).unwrap();
    let mean_beta = beta.sum() / 7.0;
    for row in tape.value(y).data().chunks(7) {
        let m: f64 = row.iter().sum::<f64>() / 7.0;
        assert!((m - mean_beta).abs() < 1e-12);
    }
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::<f64>::zeros(&[2, 3]));
    let l = tape.sum(w);
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(w).unwrap().data().iter().all(|&v| v == 1.0));
    assert_eq!(g.wrt(w).unwrap().shape(), &[2, 3]);

    let mut tape = Tape::new();
    let w = tape.leaf(t(&[2], &[1., 2.]));
    let sq = tape.square(w);
    let l = tape.sum(sq);
    assert_eq!(tape.backward(l).unwrap().wrt(w).unwrap().data(), &[2., 4.]);
}

#[test]
fn backward_errors() {
    let mut tape = Tape::new();
    let w = tape.leaf(Tensor::<f64>::zeros(&[2]));
    assert!(matches!(tape.backward(w), Err(Error::Usage(_))));
    let c = tape.constant(Tensor::<f64>::zeros(&[1]));
    assert!(matches!(tape.backward(c), Err(Error::Usage(_))));
}

#[test]
fn shared_use_accumulates() {
    let mut tape = Tape::new();
    let w = tape.leaf(t(&[1], &[3.]));
    let p = tape.mul(w, w).unwrap();
    let q = tape.add(p, w).unwrap();
    let l = tape.sum(q);
    assert_eq!(tape.backward(l).unwrap().wrt(w).unwrap().data(), &[7.]);
}

#[test]
fn backward_is_linear_in_loss_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x0 = random(&[4, 3], &mut rng);
    let grad = |alpha: f64| {
        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let s = tape.sin(x);
        let e = tape.exp(s);
        let l = tape.sum(e);
        let l = tape.scale(l, alpha);
        tape.backward(l).unwrap().wrt(x).unwrap().clone()
    };
    let (g1, g3) = (grad(1.0), grad(-3.7));
    for (a, b) in g1.data().iter().zip(g3.data()) {
        assert!(rel_err(-3.7 * a, *b) <= 1e-12);
    }
}

#[test]
fn elementwise_and_reduction_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = random(&[3, 4], &mut rng);
    let w = random(&[4], &mut rng);
    let err = check_grad(&x0, |tp, x| {
        let s = tp.sin(x);
        let g = tp.gelu(s);
        let sg = tp.sigmoid(x);
        let m = tp.mul(g, sg).unwrap();
        let wv = tp.constant(w.clone());
        let b = tp.sub(m, wv).unwrap();
        let e = tp.exp(b);
        let r = tp.sum_axis(e, 0).unwrap();
        let q = tp.square(r);
        tp.mean(q)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn norm_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x0 = random(&[6, 5], &mut rng);
    let gamma = random(&[5], &mut rng);
    let target = random(&[6, 5], &mut rng);
    for batch in [false, true] {
        let err = check_grad(&x0, |tp, x| {
            let g = tp.constant(gamma.clone());
            let b = tp.constant(Tensor::full(&[5], 0.3));
            let y = if batch {
                tp.batch_norm(x, g, b, 1e-5).unwrap().0
            } else {
                tp.layer_norm(x, g, b, 1e-5).unwrap()
            };
            let tv = tp.constant(target.clone());
            let m = tp.mul(y, tv).unwrap();
            let s = tp.sin(m);
            tp.sum(s)
        });
        assert!(err <= 1e-5, "batch={batch}: {err}");
    }
}

#[test]
fn matmul_and_sq_dist_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a0 = random(&[3, 2], &mut rng);
    let b0 = random(&[4, 2], &mut rng);
    let err = check_grad(&a0, |tp, a| {
        let b = tp.constant(b0.clone());
        let d = tp.sq_dist(a, b).unwrap();
        let bt = tp.transpose(b).unwrap();
        let p = tp.matmul(a, bt).unwrap();
        let q = tp.mul(d, p).unwrap();
        tp.sum(q)
    });
    assert!(err <= 1e-6, "{err}");
    let err = check_grad(&b0, |tp, b| {
        let a = tp.constant(a0.clone());
        let d = tp.sq_dist(a, b).unwrap();
        let e = tp.exp(d);
        tp.sum(e)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn conv_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let target = random(&[2, 3, 7], &mut rng);
    let x0 = random(&[2, 2, 7], &mut rng);
    let k0 = random(&[3, 2, 4], &mut rng);
    let loss = |tp: &mut Tape<f64>, x: Var, k: Var| {
        let y = tp.conv(x, k, ConvMode::Causal).unwrap();
        let tv = tp.constant(target.clone());
        let m = tp.mul(y, tv).unwrap();
        let s = tp.square(m);
        tp.sum(s)
    };
    let err = check_grad(&x0, |tp, x| {
        let k = tp.constant(k0.clone());
        loss(tp, x, k)
    });
    assert!(err <= 1e-6, "dx {err}");
    let err = check_grad(&k0, |tp, k| {
        let x = tp.constant(x0.clone());
        loss(tp, x, k)
    });
    assert!(err <= 1e-6, "dk {err}");

    let target = random(&[1, 2, 5, 6], &mut rng);
    let x0 = random(&[1, 2, 5, 6], &mut rng);
    let k0 = random(&[2, 2, 3, 3], &mut rng);
    let loss2 = |tp: &mut Tape<f64>, x: Var, k: Var| {
        let y = tp.conv(x, k, ConvMode::Centered).unwrap();
        let tv = tp.constant(target.clone());
        let m = tp.mul(y, tv).unwrap();
        let s = tp.sin(m);
        tp.sum(s)
    };
    let err = check_grad(&k0, |tp, k| {
        let x = tp.constant(x0.clone());
        loss2(tp, x, k)
    });
    assert!(err <= 1e-6, "dk 2d {err}");
    let err = check_grad(&x0, |tp, x| {
        let k = tp.constant(k0.clone());
        loss2(tp, x, k)
    });
    assert!(err <= 1e-6, "dx 2d {err}");
}

#[test]
fn depthwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for (spatial, extent, mode) in [
        (vec![9usize], vec![9usize], ConvMode::Causal),
        (vec![9], vec![4], ConvMode::Causal),
        (vec![4, 5], vec![3, 5], ConvMode::Centered),
    ] {
        let c = 3;
        let mut xs = vec![2];
        xs.extend(&spatial);
        xs.push(c);
        let kl: usize = extent.iter().product();
        let x0 = random(&xs, &mut rng);
        let k0 = random(&[kl, c], &mut rng);
        let target = random(&xs, &mut rng);
        let loss = |tp: &mut Tape<f64>, x: Var, k: Var| {
            let y = tp.depthwise_conv(x, k, mode, &spatial, &extent).unwrap();
            let tv = tp.constant(target.clone());
            let m = tp.mul(y, tv).unwrap();
            let s = tp.sin(m);
            tp.sum(s)
        };
        let ex = check_grad(&x0, |tp, x| {
            let k = tp.constant(k0.clone());
            loss(tp, x, k)
        });
        let ek = check_grad(&k0, |tp, k| {
            let x = tp.constant(x0.clone());
            loss(tp, x, k)
        });
        assert!(ex <= 1e-6 && ek <= 1e-6, "{spatial:?}: dx {ex} dk {ek}");
    }
}

#[test]
fn cross_entropy_cases() {
    let mut tape = Tape::new();
    let u = tape.leaf(Tensor::<f64>::zeros(&[2, 10]));
    let l = tape.cross_entropy(u, &[3, 7]).unwrap();
    assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);
    assert!(matches!(tape.cross_entropy(u, &[3, 10]), Err(Error::Usage(_))));

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x0 = random(&[4, 5], &mut rng).map(|v| 3.0 * v);
    let labels = [0, 4, 2, 2];
    let mut tape = Tape::new();
    let x = tape.constant(x0.clone());
    let l = tape.cross_entropy(x, &labels).unwrap();
    let mut oracle = 0.0;
    for (i, &lab) in labels.iter().enumerate() {
        let row = &x0.data()[i * 5..(i + 1) * 5];
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        oracle -= (row[lab].exp() / z).ln();
    }
    assert!((tape.value(l).item() - oracle / 4.0).abs() <= 1e-12);
    let err = check_grad(&x0, |tp, x| tp.cross_entropy(x, &labels).unwrap());
    assert!(err <= 1e-6);

    let mut tape = Tape::new();
    let big = tape.constant(t(&[1, 3], &[1000., 0., 0.]));
    let l = tape.cross_entropy(big, &[0]).unwrap();
    assert!(tape.value(l).item() < 1e-12);
}
