//! Real 2D transforms over zero-padded planes and the shared plan cache.
//!
//! A 1D signal is a plane with a single row; the column transform is then
//! skipped. Spectra are stored row-major with `pw / 2 + 1` complex bins per
//! row.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::tensor::Real;

type RealPair<T> = (Arc<dyn RealToComplex<T>>, Arc<dyn ComplexToReal<T>>);
type ComplexPair<T> = (Arc<dyn Fft<T>>, Arc<dyn Fft<T>>);

/// Transform plans keyed by length. Lookups take a shared lock; a missing
/// plan is built under the exclusive lock.
pub struct FftPlans<T: Real> {
    real: RwLock<HashMap<usize, RealPair<T>>>,
    complex: RwLock<HashMap<usize, ComplexPair<T>>>,
}

impl<T: Real> Default for FftPlans<T> {
    fn default() -> Self {
        FftPlans {
            real: RwLock::new(HashMap::new()),
            complex: RwLock::new(HashMap::new()),
        }
    }
}

impl<T: Real> FftPlans<T> {
    pub fn real(&self, len: usize) -> RealPair<T> {
        if let Some(p) = self.real.read().expect("fft cache poisoned").get(&len) {
            return p.clone();
        }
        let mut map = self.real.write().expect("fft cache poisoned");
        map.entry(len)
            .or_insert_with(|| {
                let mut planner = RealFftPlanner::<T>::new();
                (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
            })
            .clone()
    }

    pub fn complex(&self, len: usize) -> ComplexPair<T> {
        if let Some(p) = self.complex.read().expect("fft cache poisoned").get(&len) {
            return p.clone();
        }
        let mut map = self.complex.write().expect("fft cache poisoned");
        map.entry(len)
            .or_insert_with(|| {
                let mut planner = FftPlanner::<T>::new();
                (planner.plan_fft_forward(len), planner.plan_fft_inverse(len))
            })
            .clone()
    }

    /// Number of cached real-transform lengths.
    pub fn cached_real_lengths(&self) -> usize {
        self.real.read().expect("fft cache poisoned").len()
    }
}

/// Padded transform extent for one plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Padded {
    pub rows: usize,
    pub cols: usize,
}

impl Padded {
    /// Smallest power-of-two extents holding a linear convolution of a
    /// `signal` plane with a `kernel` plane.
    pub fn for_linear_conv(signal: (usize, usize), kernel: (usize, usize)) -> Self {
        Padded {
            rows: (signal.0 + kernel.0 - 1).next_power_of_two(),
            cols: (signal.1 + kernel.1 - 1).next_power_of_two(),
        }
    }

    pub fn bins(&self) -> usize {
        self.cols / 2 + 1
    }

    pub fn spectrum_len(&self) -> usize {
        self.rows * self.bins()
    }
}

/// Forward transform of an `h x w` plane placed at `(off_r, off_c)` inside a
/// zero plane of extent `pad`.
pub fn forward<T: Real>(
    plane: &[T],
    (h, w): (usize, usize),
    (off_r, off_c): (usize, usize),
    pad: Padded,
) -> Vec<Complex<T>> {
    debug_assert_eq!(plane.len(), h * w);
    debug_assert!(off_r + h <= pad.rows && off_c + w <= pad.cols);
    let plans = T::fft_plans();
    let (r2c, _) = plans.real(pad.cols);
    let bins = pad.bins();
    let mut spec = vec![Complex::new(T::zero(), T::zero()); pad.spectrum_len()];
    let mut row = r2c.make_input_vec();
    let mut scratch = r2c.make_scratch_vec();
    for r in 0..h {
        row.iter_mut().for_each(|v| *v = T::zero());
        row[off_c..off_c + w].copy_from_slice(&plane[r * w..(r + 1) * w]);
        let out = &mut spec[(r + off_r) * bins..(r + off_r + 1) * bins];
        r2c.process_with_scratch(&mut row, out, &mut scratch)
            .expect("real fft sizes");
    }
    if pad.rows > 1 {
        columns(&mut spec, pad, true);
    }
    spec
}

/// Inverse transform, returning the `rows x cols` window starting at
/// `(r0, c0)` of the real result, normalized.
pub fn inverse_window<T: Real>(
    mut spec: Vec<Complex<T>>,
    pad: Padded,
    (r0, c0): (usize, usize),
    (rows, cols): (usize, usize),
) -> Vec<T> {
    debug_assert!(r0 + rows <= pad.rows && c0 + cols <= pad.cols);
    if pad.rows > 1 {
        columns(&mut spec, pad, false);
    }
    let plans = T::fft_plans();
    let (_, c2r) = plans.real(pad.cols);
    let bins = pad.bins();
    let norm = T::one() / T::from_usize(pad.rows * pad.cols).expect("size");
    let mut line = c2r.make_output_vec();
    let mut scratch = c2r.make_scratch_vec();
    let mut out = Vec::with_capacity(rows * cols);
    for r in r0..r0 + rows {
        let bins_row = &mut spec[r * bins..(r + 1) * bins];
        // The result is real, so DC and Nyquist bins carry no imaginary part.
        bins_row[0].im = T::zero();
        if pad.cols % 2 == 0 {
            bins_row[bins - 1].im = T::zero();
        }
        c2r.process_with_scratch(bins_row, &mut line, &mut scratch)
            .expect("inverse real fft sizes");
        out.extend(line[c0..c0 + cols].iter().map(|&v| v * norm));
    }
    out
}

fn columns<T: Real>(spec: &mut [Complex<T>], pad: Padded, forward: bool) {
    let plans = T::fft_plans();
    let (fwd, inv) = plans.complex(pad.rows);
    let fft = if forward { fwd } else { inv };
    let bins = pad.bins();
    let mut col = vec![Complex::new(T::zero(), T::zero()); pad.rows];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    for c in 0..bins {
        for r in 0..pad.rows {
            col[r] = spec[r * bins + c];
        }
        fft.process_with_scratch(&mut col, &mut scratch);
        for r in 0..pad.rows {
            spec[r * bins + c] = col[r];
        }
    }
}

/// `acc += a * b` per bin.
pub fn mul_acc<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o = *o + x * y;
    }
}

/// `acc += a * conj(b)` per bin; the spectral form of cross-correlation.
pub fn mul_conj_acc<T: Real>(acc: &mut [Complex<T>], a: &[Complex<T>], b: &[Complex<T>]) {
    for ((o, x), y) in acc.iter_mut().zip(a).zip(b) {
        *o = *o + x * y.conj();
    }
}

pub fn zero_spectrum<T: Real>(pad: Padded) -> Vec<Complex<T>> {
    vec![Complex::new(T::zero(), T::zero()); pad.spectrum_len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_2d() {
        let pad = Padded { rows: 8, cols: 16 };
        let plane: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let spec = forward(&plane, (3, 5), (2, 4), pad);
        let back = inverse_window(spec, pad, (2, 4), (3, 5));
        for (a, b) in plane.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn plans_are_cached() {
        let plans = f64::fft_plans();
        let _ = plans.real(4096);
        let before = plans.cached_real_lengths();
        let _ = plans.real(4096);
        assert_eq!(plans.cached_real_lengths(), before);
    }
}
