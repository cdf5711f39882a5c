//! Vector-Jacobian products for every recorded operation.

use rayon::prelude::*;

use super::ops::{broadcast_index, gather, gelu_grad, matmul_raw, scatter_planes, sigmoid, transpose_raw};
use super::{Op, Tape, Var};
use crate::fft;
use crate::tensor::Real;

fn acc<T: Real>(tape: &Tape<T>, grads: &mut [Option<Vec<T>>], v: Var, delta: Vec<T>) {
    if !tape.nodes[v.0].requires_grad {
        return;
    }
    match &mut grads[v.0] {
        Some(g) => g.iter_mut().zip(delta).for_each(|(a, d)| *a = *a + d),
        slot @ None => *slot = Some(delta),
    }
}

fn needs<T: Real>(tape: &Tape<T>, v: Var) -> bool {
    tape.nodes[v.0].requires_grad
}

/// Route the output gradient `g` of node `idx` to its inputs.
pub(super) fn propagate<T: Real>(tape: &Tape<T>, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
    let node = &tape.nodes[idx];
    let out = node.value.data();
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (va, vb) = (tape.value(*a), tape.value(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            if needs(tape, *a) {
                let bt = transpose_raw(vb.data(), k, n);
                acc(tape, grads, *a, matmul_raw(g, &bt, m, n, k));
            }
            if needs(tape, *b) {
                let at = transpose_raw(va.data(), m, k);
                acc(tape, grads, *b, matmul_raw(&at, g, k, m, n));
            }
        }
        Op::Transpose(a) => {
            let va = tape.value(*a);
            let (m, n) = (va.shape()[0], va.shape()[1]);
            acc(tape, grads, *a, transpose_raw(g, n, m));
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (va, vb) = (tape.value(*a), tape.value(*b));
            let idx = broadcast_index(va.shape(), vb.shape()).expect("checked in forward");
            let (da, db): (Vec<T>, Vec<T>) = match &node.op {
                Op::Add(..) => (g.to_vec(), g.to_vec()),
                Op::Sub(..) => (g.to_vec(), g.iter().map(|&v| -v).collect()),
                _ => (
                    g.iter().zip(&idx).map(|(&gv, &i)| gv * vb.data()[i]).collect(),
                    g.iter().zip(va.data()).map(|(&gv, &x)| gv * x).collect(),
                ),
            };
            if needs(tape, *b) {
                let mut red = vec![T::zero(); vb.len()];
                for (d, &i) in db.iter().zip(&idx) {
                    red[i] = red[i] + *d;
                }
                acc(tape, grads, *b, red);
            }
            acc(tape, grads, *a, da);
        }
        Op::Scale(a, s) => acc(tape, grads, *a, g.iter().map(|&v| v * *s).collect()),
        Op::Sin(a) => {
            let x = tape.value(*a).data();
            acc(tape, grads, *a, g.iter().zip(x).map(|(&gv, &xv)| gv * xv.cos()).collect());
        }
        Op::Exp(a) => acc(tape, grads, *a, g.iter().zip(out).map(|(&gv, &o)| gv * o).collect()),
        Op::Gelu(a) => {
            let x = tape.value(*a).data();
            acc(tape, grads, *a, g.iter().zip(x).map(|(&gv, &xv)| gv * gelu_grad(xv)).collect());
        }
        Op::Sigmoid(a) => {
            let x = tape.value(*a).data();
            acc(
                tape,
                grads,
                *a,
                g.iter()
                    .zip(x)
                    .map(|(&gv, &xv)| {
                        let s = sigmoid(xv);
                        gv * s * (T::one() - s)
                    })
                    .collect(),
            );
        }
        Op::SumAll(a) => {
            let n = tape.value(*a).len();
            acc(tape, grads, *a, vec![g[0]; n]);
        }
        Op::SumAxis { x, outer, n, inner } => {
            let mut d = vec![T::zero(); outer * n * inner];
            for o in 0..*outer {
                for j in 0..*n {
                    d[(o * n + j) * inner..(o * n + j + 1) * inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            acc(tape, grads, *x, d);
        }
        Op::Reshape(a) => acc(tape, grads, *a, g.to_vec()),
        Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
            let gam = tape.value(*gamma).data();
            let c = gam.len();
            let rows = xhat.len() / c;
            let cf = T::from_usize(c).expect("size");
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            let mut dx = vec![T::zero(); xhat.len()];
            for r in 0..rows {
                let (gr, hr) = (&g[r * c..(r + 1) * c], &xhat[r * c..(r + 1) * c]);
                let mut m1 = T::zero();
                let mut m2 = T::zero();
                for j in 0..c {
                    dg[j] = dg[j] + gr[j] * hr[j];
                    db[j] = db[j] + gr[j];
                    let dh = gr[j] * gam[j];
                    m1 = m1 + dh;
                    m2 = m2 + dh * hr[j];
                }
                m1 = m1 / cf;
                m2 = m2 / cf;
                for j in 0..c {
                    dx[r * c + j] = rstd[r] * (gr[j] * gam[j] - m1 - hr[j] * m2);
                }
            }
            acc(tape, grads, *x, dx);
            acc(tape, grads, *gamma, dg);
            acc(tape, grads, *beta, db);
        }
        Op::BatchNorm { x, gamma, beta, xhat, rstd } => {
            let gam = tape.value(*gamma).data();
            let c = gam.len();
            let rows = xhat.len() / c;
            let nf = T::from_usize(rows).expect("size");
            let mut dg = vec![T::zero(); c];
            let mut db = vec![T::zero(); c];
            for r in 0..rows {
                for j in 0..c {
                    dg[j] = dg[j] + g[r * c + j] * xhat[r * c + j];
                    db[j] = db[j] + g[r * c + j];
                }
            }
            let mut dx = vec![T::zero(); xhat.len()];
            for r in 0..rows {
                for j in 0..c {
                    let dh = g[r * c + j] * gam[j];
                    dx[r * c + j] = rstd[j] * (dh - gam[j] * (db[j] + xhat[r * c + j] * dg[j]) / nf);
                }
            }
            acc(tape, grads, *x, dx);
            acc(tape, grads, *gamma, dg);
            acc(tape, grads, *beta, db);
        }
        Op::SqDist(a, b) => {
            let (va, vb) = (tape.value(*a), tape.value(*b));
            let (n, m, d) = (va.shape()[0], vb.shape()[0], va.shape()[1]);
            let mut da = vec![T::zero(); n * d];
            let mut dbv = vec![T::zero(); m * d];
            let two = T::lit(2.0);
            for i in 0..n {
                for j in 0..m {
                    let gv = two * g[i * m + j];
                    for k in 0..d {
                        let diff = gv * (va.data()[i * d + k] - vb.data()[j * d + k]);
                        da[i * d + k] = da[i * d + k] + diff;
                        dbv[j * d + k] = dbv[j * d + k] - diff;
                    }
                }
            }
            acc(tape, grads, *a, da);
            acc(tape, grads, *b, dbv);
        }
        Op::Conv { x, k, geom } => {
            let (vx, vk) = (tape.value(*x), tape.value(*k));
            let (b, c, c_out) = (vx.shape()[0], vx.shape()[1], vk.shape()[0]);
            let (sl, kl) = (geom.signal_len(), geom.kernel_len());
            let gs: Vec<_> = (0..b * c_out)
                .into_par_iter()
                .map(|i| geom.grad_spectrum(&g[i * sl..(i + 1) * sl]))
                .collect();
            if needs(tape, *x) {
                let ks: Vec<_> = (0..c_out * c)
                    .into_par_iter()
                    .map(|i| geom.kernel_spectrum(&vk.data()[i * kl..(i + 1) * kl]))
                    .collect();
                let dx: Vec<T> = (0..b * c)
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        let (bi, ci) = (i / c, i % c);
                        let mut s = fft::zero_spectrum(geom.padded());
                        for co in 0..c_out {
                            fft::mul_conj_acc(&mut s, &gs[bi * c_out + co], &ks[co * c + ci]);
                        }
                        geom.grad_input(s)
                    })
                    .collect();
                acc(tape, grads, *x, dx);
            }
            if needs(tape, *k) {
                let xs: Vec<_> = (0..b * c)
                    .into_par_iter()
                    .map(|i| geom.signal_spectrum(&vx.data()[i * sl..(i + 1) * sl]))
                    .collect();
                let dk: Vec<T> = (0..c_out * c)
                    .into_par_iter()
                    .flat_map_iter(|i| {
                        let (co, ci) = (i / c, i % c);
                        let mut s = fft::zero_spectrum(geom.padded());
                        for bi in 0..b {
                            fft::mul_conj_acc(&mut s, &gs[bi * c_out + co], &xs[bi * c + ci]);
                        }
                        geom.grad_kernel(s)
                    })
                    .collect();
                acc(tape, grads, *k, dk);
            }
        }
        Op::DepthwiseConv { x, k, geom } => {
            let (vx, vk) = (tape.value(*x), tape.value(*k));
            let c = *vx.shape().last().expect("rank");
            let b = vx.shape()[0];
            let (sl, kl) = (geom.signal_len(), geom.kernel_len());
            let (need_x, need_k) = (needs(tape, *x), needs(tape, *k));
            // Per channel: input-gradient planes for every batch item and the
            // kernel gradient summed over the batch.
            let per_channel: Vec<(Vec<Vec<T>>, Vec<T>)> = (0..c)
                .into_par_iter()
                .map(|ch| {
                    let kf = geom.kernel_spectrum(&gather(vk.data(), ch, c, kl));
                    let mut dks = fft::zero_spectrum(geom.padded());
                    let mut dxs = Vec::with_capacity(if need_x { b } else { 0 });
                    for bi in 0..b {
                        let block = bi * sl * c..(bi + 1) * sl * c;
                        let gf = geom.grad_spectrum(&gather(&g[block.clone()], ch, c, sl));
                        if need_x {
                            let mut s = fft::zero_spectrum(geom.padded());
                            fft::mul_conj_acc(&mut s, &gf, &kf);
                            dxs.push(geom.grad_input(s));
                        }
                        if need_k {
                            let xf = geom.signal_spectrum(&gather(&vx.data()[block], ch, c, sl));
                            fft::mul_conj_acc(&mut dks, &gf, &xf);
                        }
                    }
                    let dk = if need_k { geom.grad_kernel(dks) } else { Vec::new() };
                    (dxs, dk)
                })
                .collect();
            if need_k {
                let mut dk = vec![T::zero(); kl * c];
                for (ch, (_, kg)) in per_channel.iter().enumerate() {
                    for (i, &v) in kg.iter().enumerate() {
                        dk[i * c + ch] = v;
                    }
                }
                acc(tape, grads, *k, dk);
            }
            if need_x {
                let mut planes = vec![Vec::new(); b * c];
                for (ch, (dxs, _)) in per_channel.into_iter().enumerate() {
                    for (bi, p) in dxs.into_iter().enumerate() {
                        planes[bi * c + ch] = p;
                    }
                }
                let mut dx = vec![T::zero(); vx.len()];
                scatter_planes(&mut dx, &planes, b, c, sl);
                acc(tape, grads, *x, dx);
            }
        }
        Op::CrossEntropy { logits, labels, probs } => {
            let b = labels.len();
            let n = probs.len() / b;
            let scale = g[0] / T::from_usize(b).expect("size");
            let mut d: Vec<T> = probs.iter().map(|&p| p * scale).collect();
            for (i, &l) in labels.iter().enumerate() {
                d[i * n + l] = d[i * n + l] - scale;
            }
            acc(tape, grads, *logits, d);
        }
    }
}
