//! Long convolutions with generated kernels.
//!
//! Every convolution here is a crop of the full linear convolution of a
//! plane with a kernel plane. 1D signals are planes with one row.
//!
//! * Causal (1D only): the kernel grid runs from the oldest lag (coordinate
//!   -1, index 0) to the present (coordinate +1, last index), so
//!   `y[t] = sum_tau k[Lk - 1 - tau] * x[t - tau]`.
//! * Centered: odd kernel extents, kernel center at coordinate 0, same-size
//!   output with zero padding, `y[p] = sum_i k[i] * x[p - i + c]`.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::fft::{self, Padded};
use crate::kernelgen::{CoordinateGrid, KernelGenerator};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Causal,
    Centered,
}

/// Geometry of one plane-by-plane convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneConv {
    signal: (usize, usize),
    kernel: (usize, usize),
    offset: (usize, usize),
    flip: bool,
    pad: Padded,
}

impl PlaneConv {
    pub fn new(mode: ConvMode, signal: (usize, usize), kernel: (usize, usize)) -> Result<Self> {
        if signal.0 == 0 || signal.1 == 0 || kernel.0 == 0 || kernel.1 == 0 {
            return Err(Error::usage("convolution extents must be positive"));
        }
        let (offset, flip) = match mode {
            ConvMode::Causal => {
                if signal.0 != 1 || kernel.0 != 1 {
                    return Err(Error::usage("causal convolution is defined for 1D signals only"));
                }
                if kernel.1 > signal.1 {
                    return Err(Error::usage(format!(
                        "causal kernel length {} exceeds signal length {}",
                        kernel.1, signal.1
                    )));
                }
                ((0, 0), true)
            }
            ConvMode::Centered => {
                if kernel.0 % 2 == 0 || kernel.1 % 2 == 0 {
                    return Err(Error::usage(format!(
                        "centered convolution needs odd kernel extents, got {}x{}",
                        kernel.0, kernel.1
                    )));
                }
                (((kernel.0 - 1) / 2, (kernel.1 - 1) / 2), false)
            }
        };
        Ok(PlaneConv {
            signal,
            kernel,
            offset,
            flip,
            pad: Padded::for_linear_conv(signal, kernel),
        })
    }

    pub fn signal(&self) -> (usize, usize) {
        self.signal
    }

    pub fn kernel(&self) -> (usize, usize) {
        self.kernel
    }

    pub fn padded(&self) -> Padded {
        self.pad
    }

    pub fn signal_len(&self) -> usize {
        self.signal.0 * self.signal.1
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }

    fn oriented<T: Real>(&self, k: &[T]) -> Vec<T> {
        let mut k = k.to_vec();
        if self.flip {
            k.reverse();
        }
        k
    }

    pub fn kernel_spectrum<T: Real>(&self, k: &[T]) -> Vec<Complex<T>> {
        fft::forward(&self.oriented(k), self.kernel, (0, 0), self.pad)
    }

    pub fn signal_spectrum<T: Real>(&self, x: &[T]) -> Vec<Complex<T>> {
        fft::forward(x, self.signal, (0, 0), self.pad)
    }

    /// Output plane from the product spectrum `X * K`.
    pub fn output<T: Real>(&self, spec: Vec<Complex<T>>) -> Vec<T> {
        fft::inverse_window(spec, self.pad, self.offset, self.signal)
    }

    /// Spectrum of an output-gradient plane, aligned with the full convolution.
    pub fn grad_spectrum<T: Real>(&self, g: &[T]) -> Vec<Complex<T>> {
        fft::forward(g, self.signal, self.offset, self.pad)
    }

    /// Input gradient from the spectrum `G * conj(K)`.
    pub fn grad_input<T: Real>(&self, spec: Vec<Complex<T>>) -> Vec<T> {
        fft::inverse_window(spec, self.pad, (0, 0), self.signal)
    }

    /// Kernel gradient from the spectrum `G * conj(X)`, in grid orientation.
    pub fn grad_kernel<T: Real>(&self, spec: Vec<Complex<T>>) -> Vec<T> {
        let mut k = fft::inverse_window(spec, self.pad, (0, 0), self.kernel);
        if self.flip {
            k.reverse();
        }
        k
    }

    /// Direct-summation convolution of one plane, added into `out`.
    pub fn direct_acc<T: Real>(&self, x: &[T], k: &[T], out: &mut [T]) {
        let k = self.oriented(k);
        let (h, w) = self.signal;
        let (kh, kw) = self.kernel;
        let (oh, ow) = self.offset;
        for p in 0..h {
            for q in 0..w {
                let mut acc = T::zero();
                for i in 0..kh {
                    let r = p + oh;
                    if r < i || r - i >= h {
                        continue;
                    }
                    let xr = (r - i) * w;
                    let kr = i * kw;
                    let c = q + ow;
                    let j_lo = (c + 1).saturating_sub(w);
                    let j_hi = kw.min(c + 1);
                    for j in j_lo..j_hi {
                        acc = acc + k[kr + j] * x[xr + c - j];
                    }
                }
                out[p * w + q] = out[p * w + q] + acc;
            }
        }
    }
}

/// Spatial plane extents of a tensor's trailing `dims` axes.
fn plane_of(shape: &[usize], dims: usize) -> (usize, usize) {
    match dims {
        1 => (1, shape[shape.len() - 1]),
        _ => (shape[shape.len() - 2], shape[shape.len() - 1]),
    }
}

fn check_full(x: &[usize], k: &[usize], dims: usize) -> Result<()> {
    if x.len() != dims + 2 || k.len() != dims + 2 || x[1] != k[1] {
        return Err(Error::dim("conv", x, k));
    }
    Ok(())
}

/// Full (dense channel mixing) convolution `[B, C, s..] * [C', C, ks..]`.
fn full_conv<T: Real>(x: &Tensor<T>, k: &Tensor<T>, mode: ConvMode, dims: usize, use_fft: bool) -> Result<Tensor<T>> {
    check_full(x.shape(), k.shape(), dims)?;
    let (b, c) = (x.shape()[0], x.shape()[1]);
    let c_out = k.shape()[0];
    let geom = PlaneConv::new(mode, plane_of(x.shape(), dims), plane_of(k.shape(), dims))?;
    let (sl, kl) = (geom.signal_len(), geom.kernel_len());
    let mut out_shape = x.shape().to_vec();
    out_shape[1] = c_out;
    let mut out = vec![T::zero(); b * c_out * sl];
    if use_fft {
        let xs: Vec<Vec<Complex<T>>> = (0..b * c)
            .into_par_iter()
            .map(|i| geom.signal_spectrum(&x.data()[i * sl..(i + 1) * sl]))
            .collect();
        out.par_chunks_mut(c_out * sl)
            .enumerate()
            .for_each(|(bi, out_b)| {
                for co in 0..c_out {
                    let mut acc = fft::zero_spectrum(geom.padded());
                    for ci in 0..c {
                        let kf = geom.kernel_spectrum(&k.data()[(co * c + ci) * kl..(co * c + ci + 1) * kl]);
                        fft::mul_acc(&mut acc, &xs[bi * c + ci], &kf);
                    }
                    out_b[co * sl..(co + 1) * sl].copy_from_slice(&geom.output(acc));
                }
            });
    } else {
        out.par_chunks_mut(c_out * sl)
            .enumerate()
            .for_each(|(bi, out_b)| {
                for co in 0..c_out {
                    for ci in 0..c {
                        geom.direct_acc(
                            &x.data()[(bi * c + ci) * sl..(bi * c + ci + 1) * sl],
                            &k.data()[(co * c + ci) * kl..(co * c + ci + 1) * kl],
                            &mut out_b[co * sl..(co + 1) * sl],
                        );
                    }
                }
            });
    }
    Tensor::new(out_shape, out)
}

fn mode_1d(causal: bool) -> ConvMode {
    if causal {
        ConvMode::Causal
    } else {
        ConvMode::Centered
    }
}

/// Direct 1D convolution, `x: [B, C, L]`, `k: [C', C, Lk]`.
pub fn conv1d_direct<T: Real>(x: &Tensor<T>, k: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    full_conv(x, k, mode_1d(causal), 1, false)
}

/// FFT 1D convolution; numerically equal to [`conv1d_direct`].
pub fn conv1d_fft<T: Real>(x: &Tensor<T>, k: &Tensor<T>, causal: bool) -> Result<Tensor<T>> {
    full_conv(x, k, mode_1d(causal), 1, true)
}

/// Direct centered 2D convolution, `x: [B, C, H, W]`, `k: [C', C, Hk, Wk]`.
pub fn conv2d_direct<T: Real>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    full_conv(x, k, ConvMode::Centered, 2, false)
}

/// FFT centered 2D convolution; numerically equal to [`conv2d_direct`].
pub fn conv2d_fft<T: Real>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Tensor<T>> {
    full_conv(x, k, ConvMode::Centered, 2, true)
}

/// Channel-wise convolution, `x: [B, C, s..]`, `k: [C, ks..]`: every input
/// channel is convolved with its own kernel.
pub fn depthwise_conv<T: Real>(x: &Tensor<T>, k: &Tensor<T>, mode: ConvMode, use_fft: bool) -> Result<Tensor<T>> {
    let dims = x.rank().checked_sub(2).filter(|d| (1..=2).contains(d)).ok_or_else(|| Error::dim("depthwise_conv", x.shape(), k.shape()))?;
    if k.rank() != dims + 1 || k.shape()[0] != x.shape()[1] {
        return Err(Error::dim("depthwise_conv", x.shape(), k.shape()));
    }
    let c = x.shape()[1];
    let geom = PlaneConv::new(mode, plane_of(x.shape(), dims), plane_of(k.shape(), dims))?;
    let (sl, kl) = (geom.signal_len(), geom.kernel_len());
    let mut out = vec![T::zero(); x.len()];
    out.par_chunks_mut(sl).enumerate().for_each(|(i, out_p)| {
        let ch = i % c;
        let xp = &x.data()[i * sl..(i + 1) * sl];
        let kp = &k.data()[ch * kl..(ch + 1) * kl];
        if use_fft {
            let mut spec = geom.signal_spectrum(xp);
            let kf = geom.kernel_spectrum(kp);
            spec.iter_mut().zip(&kf).for_each(|(a, b)| *a = *a * b);
            out_p.copy_from_slice(&geom.output(spec));
        } else {
            geom.direct_acc(xp, kp, out_p);
        }
    });
    Tensor::new(x.shape().to_vec(), out)
}

/// Factor `(r_train / r_test)^D` relating responses at two sampling
/// resolutions.
pub fn resolution_factor(r_train: f64, r_test: f64, dims: usize) -> Result<f64> {
    if !(r_train > 0.0 && r_test > 0.0) || !r_train.is_finite() || !r_test.is_finite() {
        return Err(Error::usage(format!(
            "resolutions must be positive, got {r_train} and {r_test}"
        )));
    }
    Ok((r_train / r_test).powi(dims as i32))
}

/// Rescale a convolution response computed at `r_test` so that it matches the
/// response at `r_train`.
pub fn resolution_rescale<T: Real>(y: &Tensor<T>, r_train: f64, r_test: f64, dims: usize) -> Result<Tensor<T>> {
    let f = T::lit(resolution_factor(r_train, r_test, dims)?);
    Ok(y.map(|v| v * f))
}

/// Description of one continuous convolution layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub dims: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub separable: bool,
    pub mode: ConvMode,
    /// Per-axis kernel extent; `None` makes the kernel as large as the input.
    pub kernel_points: Option<Vec<usize>>,
}

impl ConvLayerSpec {
    pub fn separable(dims: usize, n_in: usize, n_out: usize) -> Self {
        ConvLayerSpec {
            dims,
            n_in,
            n_out,
            separable: true,
            mode: if dims == 1 { ConvMode::Causal } else { ConvMode::Centered },
            kernel_points: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dims) {
            return Err(Error::usage(format!("dimensionality must be 1 or 2, got {}", self.dims)));
        }
        if self.n_in == 0 || self.n_out == 0 {
            return Err(Error::usage("channel counts must be positive"));
        }
        if self.mode == ConvMode::Causal && self.dims != 1 {
            return Err(Error::usage("causal mode requires dims = 1"));
        }
        if let Some(kp) = &self.kernel_points {
            if kp.len() != self.dims || kp.iter().any(|&k| k == 0) {
                return Err(Error::usage(format!("kernel_points {kp:?} invalid for dims {}", self.dims)));
            }
            if self.mode == ConvMode::Centered && kp.iter().any(|k| k % 2 == 0) {
                return Err(Error::usage("centered mode requires odd kernel extents"));
            }
        }
        Ok(())
    }

    /// Width of the generator output this layer needs.
    pub fn generator_width(&self) -> usize {
        if self.separable {
            self.n_in
        } else {
            self.n_in * self.n_out
        }
    }

    /// Kernel extents for an input of the given spatial extents. Full-size
    /// centered kernels drop one point on even axes; causal kernels are
    /// clamped to the input length.
    pub fn kernel_extent(&self, input: &[usize]) -> Vec<usize> {
        match &self.kernel_points {
            Some(kp) => kp
                .iter()
                .zip(input)
                .map(|(&k, &n)| if self.mode == ConvMode::Causal { k.min(n) } else { k })
                .collect(),
            None => input
                .iter()
                .map(|&n| match self.mode {
                    ConvMode::Causal => n,
                    ConvMode::Centered if n % 2 == 0 => n - 1,
                    ConvMode::Centered => n,
                })
                .collect(),
        }
    }
}

/// Depthwise-separable continuous convolution: generated channel-wise kernels
/// followed by a pointwise `n_in -> n_out` map with the layer's only bias.
#[derive(Clone, Debug)]
pub struct SeparableConv<T: Real> {
    pub spec: ConvLayerSpec,
    pub generator: KernelGenerator<T>,
    /// `[n_out, n_in]`
    pub pointwise: Param<T>,
    /// `[n_out]`
    pub bias: Param<T>,
}

impl<T: Real> SeparableConv<T> {
    pub fn new(spec: ConvLayerSpec, generator: KernelGenerator<T>, pointwise: Param<T>, bias: Param<T>) -> Result<Self> {
        spec.validate()?;
        if !spec.separable {
            return Err(Error::usage("SeparableConv needs a separable spec"));
        }
        if generator.out_channels() != spec.n_in || generator.dims() != spec.dims {
            return Err(Error::usage(format!(
                "generator (D={}, out={}) does not match layer (D={}, n_in={})",
                generator.dims(),
                generator.out_channels(),
                spec.dims,
                spec.n_in
            )));
        }
        if pointwise.value.shape() != [spec.n_out, spec.n_in] || bias.value.shape() != [spec.n_out] {
            return Err(Error::dim("separable_conv", pointwise.value.shape(), &[spec.n_out, spec.n_in]));
        }
        Ok(SeparableConv { spec, generator, pointwise, bias })
    }

    /// Generated (masked) kernel for an input of the given spatial extents,
    /// as a `[points, n_in]` tape value.
    pub fn kernel(&self, tape: &mut Tape<T>, spatial: &[usize]) -> Result<Var> {
        let extent = self.spec.kernel_extent(spatial);
        let grid = CoordinateGrid::regular(self.spec.dims, &extent, self.spec.mode == ConvMode::Causal)?;
        let raw = self.generator.forward(tape, &grid)?;
        self.generator.masked(tape, raw, &grid)
    }

    /// Forward pass on channels-last activations `[B, s.., n_in]`.
    /// `conv_scale` multiplies the channel-wise stage (resolution changes).
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, conv_scale: Option<T>) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        if shape.len() != self.spec.dims + 2 || shape[shape.len() - 1] != self.spec.n_in {
            return Err(Error::dim("separable_conv", &shape, &[self.spec.n_in]));
        }
        let spatial = &shape[1..shape.len() - 1];
        let kernel = self.kernel(tape, spatial)?;
        let extent = self.spec.kernel_extent(spatial);
        let y = tape.depthwise_conv(x, kernel, self.spec.mode, spatial, &extent)?;
        let y = match conv_scale {
            Some(s) => tape.scale(y, s),
            None => y,
        };
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let flat = tape.reshape(y, &[rows, self.spec.n_in])?;
        let w = tape.param(&self.pointwise);
        let b = tape.param(&self.bias);
        let out = tape.linear(flat, w, b)?;
        let mut out_shape = shape.clone();
        *out_shape.last_mut().expect("rank") = self.spec.n_out;
        tape.reshape(out, &out_shape)
    }
}

impl<T: Real> Parameterized<T> for SeparableConv<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.generator.visit_params(f);
        f(&self.pointwise);
        f(&self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.generator.visit_params_mut(f);
        f(&mut self.pointwise);
        f(&mut self.bias);
    }
}
