use rayon::prelude::*;

use super::{Op, Tape, Var};
use crate::conv::{ConvMode, PlaneConv};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// For each element of `lhs`, the flat index of the `rhs` element it pairs
/// with. `rhs` is left-padded with unit axes; each of its axes must equal the
/// matching `lhs` axis or be 1.
pub(crate) fn broadcast_index(lhs: &[usize], rhs: &[usize]) -> Option<Vec<usize>> {
    if rhs.len() > lhs.len() {
        return None;
    }
    let pad = lhs.len() - rhs.len();
    let mut full = vec![1usize; pad];
    full.extend_from_slice(rhs);
    if full.iter().zip(lhs).any(|(&r, &l)| r != l && r != 1) {
        return None;
    }
    let n: usize = lhs.iter().product();
    if full == lhs {
        return Some((0..n).collect());
    }
    let rstrides = crate::tensor::strides(&full);
    let eff: Vec<usize> = full
        .iter()
        .zip(&rstrides)
        .map(|(&d, &s)| if d == 1 { 0 } else { s })
        .collect();
    let mut idx = vec![0usize; lhs.len()];
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(idx.iter().zip(&eff).map(|(i, s)| i * s).sum());
        for ax in (0..lhs.len()).rev() {
            idx[ax] += 1;
            if idx[ax] < lhs[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    Some(out)
}

pub(crate) fn gelu<T: Real>(x: T) -> T {
    let v = x.as_f64();
    T::lit(0.5 * v * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2)))
}

pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let v = x.as_f64();
    let cdf = 0.5 * (1.0 + libm::erf(v * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    T::lit(cdf + v * pdf)
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `c[m, n] = a[m, k] * b[k, n]`, rows computed in parallel.
pub(crate) fn matmul_raw<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    let row = |(i, out): (usize, &mut [T])| {
        let ar = &a[i * k..(i + 1) * k];
        for (p, &av) in ar.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let br = &b[p * n..(p + 1) * n];
            for (o, &bv) in out.iter_mut().zip(br) {
                *o = *o + av * bv;
            }
        }
    };
    if m * k * n > 1 << 16 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
    c
}

pub(crate) fn transpose_raw<T: Real>(a: &[T], m: usize, n: usize) -> Vec<T> {
    let mut t = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            t[j * m + i] = a[i * n + j];
        }
    }
    t
}

impl<T: Real> Tape<T> {
    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.tracked(&[x]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let idx = broadcast_index(va.shape(), vb.shape()).ok_or_else(|| Error::dim(name, va.shape(), vb.shape()))?;
        let data = va.data().iter().zip(&idx).map(|(&x, &i)| f(x, vb.data()[i])).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(Error::dim("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let value = Tensor::new(vec![m, n], matmul_raw(va.data(), vb.data(), m, k, n))?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(Error::usage(format!("transpose needs a matrix, got {:?}", va.shape())));
        }
        let (m, n) = (va.shape()[0], va.shape()[1]);
        let value = Tensor::new(vec![n, m], transpose_raw(va.data(), m, n))?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    /// `x [rows, in] * w^T + b` with `w: [out, in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add(y, b)
    }

    /// Elementwise sum; `b` broadcasts along leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        self.unary(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -T::one())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.mul(a, a).expect("same shape")
    }

    pub fn sin(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.sin(), Op::Sin(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.exp(), Op::Exp(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.unary(a, gelu, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.tracked(&[a]);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        let shape = va.shape();
        if axis >= shape.len() {
            return Err(Error::usage(format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &va.data()[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (d, &s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d = *d + s;
                }
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(out_shape, out)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::SumAxis { x: a, outer, n, inner }, rg))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let n = *self
            .shape(a)
            .get(axis)
            .ok_or_else(|| Error::usage(format!("axis {axis} out of range")))?;
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, T::one() / T::from_usize(n).expect("size")))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum(a);
        self.scale(s, T::one() / T::from_usize(n).expect("size"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.tracked(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Normalize each position over the last (channel) axis, then apply the
    /// per-channel affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let vx = self.value(x);
        let c = *vx.shape().last().ok_or_else(|| Error::usage("layer_norm on a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim("layer_norm", vx.shape(), self.shape(gamma)));
        }
        if eps <= T::zero() {
            return Err(Error::usage("layer_norm eps must be positive"));
        }
        let rows = vx.len() / c;
        let cf = T::from_usize(c).expect("size");
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); vx.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            let row = &vx.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.tracked(&[x, gamma, beta]);
        Ok(self.push(value, Op::LayerNorm { x, gamma, beta, xhat, rstd }, rg))
    }

    /// Normalize each channel (last axis) with statistics over every other
    /// axis. Returns the output and the batch mean and biased variance per
    /// channel.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let vx = self.value(x);
        let c = *vx.shape().last().ok_or_else(|| Error::usage("batch_norm on a scalar"))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim("batch_norm", vx.shape(), self.shape(gamma)));
        }
        let rows = vx.len() / c;
        let nf = T::from_usize(rows).expect("size");
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for r in 0..rows {
            for j in 0..c {
                mean[j] = mean[j] + vx.data()[r * c + j];
            }
        }
        mean.iter_mut().for_each(|m| *m = *m / nf);
        for r in 0..rows {
            for j in 0..c {
                let d = vx.data()[r * c + j] - mean[j];
                var[j] = var[j] + d * d;
            }
        }
        var.iter_mut().for_each(|v| *v = *v / nf);
        let rstd: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![T::zero(); vx.len()];
        let mut out = vec![T::zero(); vx.len()];
        for r in 0..rows {
            for j in 0..c {
                let h = (vx.data()[r * c + j] - mean[j]) * rstd[j];
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.tracked(&[x, gamma, beta]);
        let v = self.push(value, Op::BatchNorm { x, gamma, beta, xhat, rstd }, rg);
        Ok((v, mean, var))
    }

    /// Squared distances `out[i, j] = |a_i - b_j|^2` between the rows of
    /// `a: [n, d]` and `b: [m, d]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[1] {
            return Err(Error::dim("sq_dist", va.shape(), vb.shape()));
        }
        let (n, m, d) = (va.shape()[0], vb.shape()[0], va.shape()[1]);
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                let mut s = T::zero();
                for k in 0..d {
                    let diff = va.data()[i * d + k] - vb.data()[j * d + k];
                    s = s + diff * diff;
                }
                out[i * m + j] = s;
            }
        }
        let value = Tensor::new(vec![n, m], out)?;
        let rg = self.tracked(&[a, b]);
        Ok(self.push(value, Op::SqDist(a, b), rg))
    }

    /// Dense convolution of `x: [B, C, s..]` with `k: [C', C, ks..]`,
    /// differentiable in both operands. `s..` has one axis for 1D, two for 2D.
    pub fn conv(&mut self, x: Var, k: Var, mode: ConvMode) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(k));
        let dims = vx.rank().wrapping_sub(2);
        if !(1..=2).contains(&dims) || vk.rank() != vx.rank() || vx.shape()[1] != vk.shape()[1] {
            return Err(Error::dim("conv", vx.shape(), vk.shape()));
        }
        let plane = |s: &[usize]| if dims == 1 { (1, s[2]) } else { (s[2], s[3]) };
        let geom = PlaneConv::new(mode, plane(vx.shape()), plane(vk.shape()))?;
        let value = if dims == 1 {
            crate::conv::conv1d_fft(vx, vk, mode == ConvMode::Causal)?
        } else {
            crate::conv::conv2d_fft(vx, vk)?
        };
        let rg = self.tracked(&[x, k]);
        Ok(self.push(value, Op::Conv { x, k, geom }, rg))
    }

    /// Channel-wise FFT convolution on channels-last activations
    /// `x: [B, s.., C]` with a generated kernel `k: [points, C]` whose rows
    /// enumerate the kernel grid in row-major order.
    pub fn depthwise_conv(&mut self, x: Var, k: Var, mode: ConvMode, spatial: &[usize], extent: &[usize]) -> Result<Var> {
        let (vx, vk) = (self.value(x), self.value(k));
        let c = *vx.shape().last().unwrap_or(&0);
        let plane = |s: &[usize]| match s {
            [l] => Ok((1, *l)),
            [h, w] => Ok((*h, *w)),
            _ => Err(Error::usage(format!("spatial extents {s:?} must have 1 or 2 axes"))),
        };
        let geom = PlaneConv::new(mode, plane(spatial)?, plane(extent)?)?;
        let (sl, kl) = (geom.signal_len(), geom.kernel_len());
        if vx.shape().len() != spatial.len() + 2
            || vx.shape()[1..vx.rank() - 1] != *spatial
            || vk.shape() != [kl, c]
        {
            return Err(Error::dim("depthwise_conv", vx.shape(), vk.shape()));
        }
        let b = vx.shape()[0];
        let kspec: Vec<_> = (0..c)
            .into_par_iter()
            .map(|ch| geom.kernel_spectrum(&gather(vk.data(), ch, c, kl)))
            .collect();
        let planes: Vec<Vec<T>> = (0..b * c)
            .into_par_iter()
            .map(|i| {
                let (bi, ch) = (i / c, i % c);
                let xp = gather(&vx.data()[bi * sl * c..(bi + 1) * sl * c], ch, c, sl);
                let mut spec = geom.signal_spectrum(&xp);
                spec.iter_mut().zip(&kspec[ch]).for_each(|(a, kf)| *a = *a * kf);
                geom.output(spec)
            })
            .collect();
        let mut out = vec![T::zero(); vx.len()];
        scatter_planes(&mut out, &planes, b, c, sl);
        let value = Tensor::new(vx.shape().to_vec(), out)?;
        let rg = self.tracked(&[x, k]);
        Ok(self.push(value, Op::DepthwiseConv { x, k, geom }, rg))
    }

    /// Mean cross-entropy of `logits: [B, n]` against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let vl = self.value(logits);
        if vl.rank() != 2 || vl.shape()[0] != labels.len() {
            return Err(Error::dim("cross_entropy", vl.shape(), &[labels.len()]));
        }
        let (b, n) = (vl.shape()[0], vl.shape()[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
            return Err(Error::usage(format!("label {bad} out of range for {n} classes")));
        }
        let mut probs = vec![T::zero(); b * n];
        let mut loss = T::zero();
        for i in 0..b {
            let row = &vl.data()[i * n..(i + 1) * n];
            let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
            let mut z = T::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                probs[i * n + j] = e;
                z = z + e;
            }
            probs[i * n..(i + 1) * n].iter_mut().for_each(|p| *p = *p / z);
            loss = loss + z.ln() + max - row[labels[i]];
        }
        let value = Tensor::scalar(loss / T::from_usize(b).expect("size"));
        let rg = self.tracked(&[logits]);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }
}

/// Channel `ch` of a channels-last block `[len, c]` as a contiguous plane.
pub(crate) fn gather<T: Real>(data: &[T], ch: usize, c: usize, len: usize) -> Vec<T> {
    (0..len).map(|i| data[i * c + ch]).collect()
}

/// Write per-(batch, channel) planes back into channels-last layout.
pub(crate) fn scatter_planes<T: Real>(out: &mut [T], planes: &[Vec<T>], b: usize, c: usize, len: usize) {
    for bi in 0..b {
        let block = &mut out[bi * len * c..(bi + 1) * len * c];
        for ch in 0..c {
            for (i, &v) in planes[bi * c + ch].iter().enumerate() {
                block[i * c + ch] = v;
            }
        }
    }
}
