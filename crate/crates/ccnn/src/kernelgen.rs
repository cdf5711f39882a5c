//! Kernel generator networks: convolution kernels as functions of
//! normalized coordinates.
//!
//! The generator is a multiplicative filter network with Gabor filters.
//! With `L` filters `g_l`,
//!
//! ```text
//! h_1     = g_1(c)
//! h_{l+1} = (W_l h_l + b_l) * g_{l+1}(c)
//! K(c)    = s * (W_out h_L + b_out)
//! g_l(c)  = exp(-gamma_l / 2 * |c - mu_l|^2) * sin(omega0 * <w_l, c> + phi_l)
//! ```
//!
//! per hidden unit, where `s` is the last-layer scale set by
//! [`KernelGenerator::rescale_last_layer`]. A learnable Gaussian mask can be
//! multiplied onto the generated kernel to make its effective size
//! trainable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Parameterized, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Normalized sample positions, `[K, D]`, row-major over the grid axes.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateGrid<T> {
    dims: usize,
    sizes: Vec<usize>,
    causal: bool,
    points: Tensor<T>,
}

fn linspace(n: usize, single: f64) -> Vec<f64> {
    if n == 1 {
        return vec![single];
    }
    (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
}

impl<T: Real> CoordinateGrid<T> {
    /// Regular grid spanning `[-1, 1]` on every axis. `causal` only records
    /// orientation: index 0 is the oldest position (-1), the last index the
    /// present (+1). A single-point causal axis sits at +1, a single-point
    /// centered axis at 0.
    pub fn regular(dims: usize, sizes: &[usize], causal: bool) -> Result<Self> {
        if !(1..=2).contains(&dims) {
            return Err(Error::usage(format!("grid dimensionality must be 1 or 2, got {dims}")));
        }
        if sizes.len() != dims {
            return Err(Error::usage(format!("{dims}D grid needs {dims} sizes, got {sizes:?}")));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::usage(format!("grid sizes must be >= 1, got {sizes:?}")));
        }
        let single = if causal { 1.0 } else { 0.0 };
        let axes: Vec<Vec<f64>> = sizes.iter().map(|&n| linspace(n, single)).collect();
        let k: usize = sizes.iter().product();
        let mut pts = Vec::with_capacity(k * dims);
        match dims {
            1 => pts.extend(axes[0].iter().map(|&v| T::lit(v))),
            _ => {
                for &r in &axes[0] {
                    for &c in &axes[1] {
                        pts.push(T::lit(r));
                        pts.push(T::lit(c));
                    }
                }
            }
        }
        Ok(CoordinateGrid {
            dims,
            sizes: sizes.to_vec(),
            causal,
            points: Tensor::new(vec![k, dims], pts)?,
        })
    }

    /// Arbitrary (irregular) coordinates, `[K, D]`.
    pub fn from_points(points: Tensor<T>) -> Result<Self> {
        if points.rank() != 2 {
            return Err(Error::usage(format!("points must be [K, D], got {:?}", points.shape())));
        }
        if !points.all_finite() {
            return Err(Error::usage("coordinates must be finite"));
        }
        let (k, dims) = (points.shape()[0], points.shape()[1]);
        Ok(CoordinateGrid {
            dims,
            sizes: vec![k],
            causal: false,
            points,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn is_causal(&self) -> bool {
        self.causal
    }

    pub fn len(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn points(&self) -> &Tensor<T> {
        &self.points
    }

    /// Keep only the listed rows.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let d = self.dims;
        let mut pts = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= self.len() {
                return Err(Error::usage(format!("row {r} out of range for {} points", self.len())));
            }
            pts.extend_from_slice(&self.points.data()[r * d..(r + 1) * d]);
        }
        Self::from_points(Tensor::new(vec![rows.len(), d], pts)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    /// Sinusoid under a Gaussian envelope.
    Gabor,
    /// Plain sinusoid (envelope width fixed at zero).
    Sine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub dims: usize,
    pub hidden: usize,
    pub out_channels: usize,
    /// Number of filters; the network has `n_layers - 1` hidden linear maps.
    pub n_layers: usize,
    pub omega0: f64,
    pub filter: FilterKind,
}

impl GeneratorConfig {
    pub fn new(dims: usize, hidden: usize, out_channels: usize, omega0: f64) -> Self {
        GeneratorConfig {
            dims,
            hidden,
            out_channels,
            n_layers: 3,
            omega0,
            filter: FilterKind::Gabor,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.dims == 0 || self.hidden == 0 || self.out_channels == 0 || self.n_layers == 0 {
            return Err(Error::usage(format!("invalid generator config {self:?}")));
        }
        if !(self.omega0 > 0.0 && self.omega0.is_finite()) {
            return Err(Error::usage(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }

    /// Trainable scalars, including the Gaussian mask.
    pub fn param_count(&self) -> usize {
        let (d, h, o, l) = (self.dims, self.hidden, self.out_channels, self.n_layers);
        let per_filter = match self.filter {
            FilterKind::Gabor => h * d + h + h + h * d,
            FilterKind::Sine => h * d + h,
        };
        l * per_filter + (l - 1) * (h * h + h) + o * h + o + 2 * d
    }
}

#[derive(Clone, Debug)]
struct Filter<T> {
    /// `[hidden, D]`
    freq: Param<T>,
    /// `[hidden]`
    phase: Param<T>,
    /// `[hidden]`, log of the envelope width; absent for sine filters.
    log_width: Option<Param<T>>,
    /// `[hidden, D]`
    center: Option<Param<T>>,
}

#[derive(Clone, Debug)]
pub struct KernelGenerator<T> {
    config: GeneratorConfig,
    filters: Vec<Filter<T>>,
    /// `(W [hidden, hidden], b [hidden])` between consecutive filters.
    hidden: Vec<(Param<T>, Param<T>)>,
    out_w: Param<T>,
    out_b: Param<T>,
    mask_mu: Param<T>,
    /// Positivity of sigma comes from storing its log.
    mask_log_sigma: Param<T>,
    init_scale: f64,
}

fn uniform_tensor<T: Real>(shape: &[usize], bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    let u = Uniform::new_inclusive(-bound, bound).expect("bound");
    Tensor::from_fn(shape, |_| T::lit(u.sample(rng)))
}

/// Initial mask width; wide enough that the mask is close to 1 over `[-1, 1]`.
pub const INITIAL_MASK_SIGMA: f64 = 2.0;

impl<T: Real> KernelGenerator<T> {
    /// Fresh generator with parameters named `kernel.*`.
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, "kernel", &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Fresh generator drawing from `rng`; parameter names start with `prefix`.
    ///
    /// Filter frequencies at layer `l` (1-based, of `L`) are uniform in
    /// `+-sqrt(l / L)` so that `omega0` sets the overall spectrum; phases are
    /// uniform in `+-pi`, envelope widths half-normal with unit scale and
    /// centers uniform in `[-1, 1]^D`. Linear weights are uniform with
    /// variance `1 / (fan_in * q)`, where `q` is the mean square of one filter
    /// response ([`filter_second_moment`]); every hidden layer and the output
    /// then have unit variance. Biases are uniform in `+-1 / sqrt(fan_in)`.
    pub fn with_rng(config: GeneratorConfig, prefix: &str, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let (d, h, o, l) = (config.dims, config.hidden, config.out_channels, config.n_layers);
        let half_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut filters = Vec::with_capacity(l);
        for i in 0..l {
            let scale = ((i + 1) as f64 / l as f64).sqrt();
            let freq = uniform_tensor(&[h, d], scale, rng);
            let phase = uniform_tensor(&[h], std::f64::consts::PI, rng);
            let (log_width, center) = match config.filter {
                FilterKind::Gabor => {
                    let w = Tensor::from_fn(&[h], |_| {
                        let g: f64 = half_normal.sample(rng);
                        T::lit(g.abs().max(1e-6).ln())
                    });
                    let c = uniform_tensor(&[h, d], 1.0, rng);
                    (
                        Some(Param::new(format!("{prefix}.filter{i}.log_width"), w, false)),
                        Some(Param::new(format!("{prefix}.filter{i}.center"), c, false)),
                    )
                }
                FilterKind::Sine => (None, None),
            };
            filters.push(Filter {
                freq: Param::new(format!("{prefix}.filter{i}.freq"), freq, false),
                phase: Param::new(format!("{prefix}.filter{i}.phase"), phase, false),
                log_width,
                center,
            });
        }
        let weight_bound = (3.0 / (h as f64 * filter_second_moment(config.filter, d))).sqrt();
        let bias_bound = 1.0 / (h as f64).sqrt();
        let hidden = (0..l - 1)
            .map(|i| {
                (
                    Param::new(format!("{prefix}.linear{i}.weight"), uniform_tensor(&[h, h], weight_bound, rng), true),
                    Param::new(format!("{prefix}.linear{i}.bias"), uniform_tensor(&[h], bias_bound, rng), false),
                )
            })
            .collect();
        let out_w = Param::new(format!("{prefix}.out.weight"), uniform_tensor(&[o, h], weight_bound, rng), true);
        let out_b = Param::new(format!("{prefix}.out.bias"), uniform_tensor(&[o], bias_bound, rng), false);
        Ok(KernelGenerator {
            config,
            filters,
            hidden,
            out_w,
            out_b,
            mask_mu: Param::new(format!("{prefix}.mask.mu"), Tensor::zeros(&[d]), false),
            mask_log_sigma: Param::new(
                format!("{prefix}.mask.log_sigma"),
                Tensor::full(&[d], T::lit(INITIAL_MASK_SIGMA.ln())),
                false,
            ),
            init_scale: 1.0,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn dims(&self) -> usize {
        self.config.dims
    }

    pub fn out_channels(&self) -> usize {
        self.config.out_channels
    }

    pub fn init_scale(&self) -> f64 {
        self.init_scale
    }

    pub fn set_init_scale(&mut self, s: f64) {
        self.init_scale = s;
    }

    /// Re-weight the output layer by `gain / sqrt(in_channels * kernel_size)`
    /// so generated kernels start with the variance of a conventionally
    /// initialized convolution.
    pub fn rescale_last_layer(&mut self, gain: f64, in_channels: usize, kernel_size: usize) -> Result<()> {
        if in_channels == 0 || kernel_size == 0 || !(gain > 0.0) {
            return Err(Error::usage(format!(
                "rescale needs gain > 0 and positive counts, got gain={gain}, in={in_channels}, k={kernel_size}"
            )));
        }
        self.init_scale = gain / ((in_channels * kernel_size) as f64).sqrt();
        Ok(())
    }

    pub fn mask_mu(&self) -> &Tensor<T> {
        &self.mask_mu.value
    }

    pub fn mask_sigma(&self) -> Tensor<T> {
        self.mask_log_sigma.value.map(|v| v.exp())
    }

    /// Record the generator on `tape`; returns the raw kernel
    /// `[K, out_channels]` (no mask).
    pub fn forward(&self, tape: &mut Tape<T>, grid: &CoordinateGrid<T>) -> Result<Var> {
        if grid.dims() != self.config.dims {
            return Err(Error::usage(format!(
                "grid has D={} but generator expects D={}",
                grid.dims(),
                self.config.dims
            )));
        }
        let c = tape.constant(grid.points().clone());
        let omega0 = T::lit(self.config.omega0);
        let mut h: Option<Var> = None;
        for (i, f) in self.filters.iter().enumerate() {
            let w = tape.param(&f.freq);
            let wt = tape.transpose(w)?;
            let proj = tape.matmul(c, wt)?;
            let proj = tape.scale(proj, omega0);
            let phi = tape.param(&f.phase);
            let arg = tape.add(proj, phi)?;
            let mut g = tape.sin(arg);
            if let (Some(lw), Some(center)) = (&f.log_width, &f.center) {
                let mu = tape.param(center);
                let dist = tape.sq_dist(c, mu)?;
                let lw = tape.param(lw);
                let gamma = tape.exp(lw);
                let e = tape.mul(dist, gamma)?;
                let e = tape.scale(e, T::lit(-0.5));
                let env = tape.exp(e);
                g = tape.mul(g, env)?;
            }
            h = Some(match h {
                None => g,
                Some(prev) => {
                    let (w, b) = &self.hidden[i - 1];
                    let (w, b) = (tape.param(w), tape.param(b));
                    let z = tape.linear(prev, w, b)?;
                    tape.mul(z, g)?
                }
            });
        }
        let h = h.expect("at least one filter");
        let (w, b) = (tape.param(&self.out_w), tape.param(&self.out_b));
        let out = tape.linear(h, w, b)?;
        Ok(if self.init_scale != 1.0 {
            tape.scale(out, T::lit(self.init_scale))
        } else {
            out
        })
    }

    /// Multiply the kernel rows by this generator's Gaussian mask.
    pub fn masked(&self, tape: &mut Tape<T>, kernel: Var, grid: &CoordinateGrid<T>) -> Result<Var> {
        let mu = tape.param(&self.mask_mu);
        let log_sigma = tape.param(&self.mask_log_sigma);
        mask_on_tape(tape, kernel, grid, mu, log_sigma)
    }

    /// Evaluate the generator at `grid` (no mask).
    pub fn generate(&self, grid: &CoordinateGrid<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, grid)?;
        Ok(tape.value(v).clone())
    }

    /// Evaluate the generator at `grid` and apply its mask.
    pub fn generate_masked(&self, grid: &CoordinateGrid<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let v = self.forward(&mut tape, grid)?;
        let v = self.masked(&mut tape, v, grid)?;
        Ok(tape.value(v).clone())
    }
}

/// Kernel values as CSV, `coord_0[,coord_1],channel,value`, one row per
/// grid point and channel.
pub fn kernel_csv<T: Real>(grid: &CoordinateGrid<T>, kernel: &Tensor<T>) -> Result<String> {
    let (n, d) = (grid.len(), grid.dims());
    if kernel.rank() != 2 || kernel.shape()[0] != n {
        return Err(Error::dim("kernel_csv", kernel.shape(), &[n]));
    }
    let channels = kernel.shape()[1];
    let mut s: String = (0..d).map(|i| format!("coord_{i},")).collect();
    s.push_str("channel,value\n");
    for p in 0..n {
        let coords: String = grid.points().data()[p * d..(p + 1) * d].iter().map(|c| format!("{c},")).collect();
        for c in 0..channels {
            s.push_str(&format!("{coords}{c},{}\n", kernel.data()[p * channels + c]));
        }
    }
    Ok(s)
}

/// `E[g(c)^2]` for one filter unit at initialization, with `c` uniform in
/// `[-1, 1]^D`.
///
/// The sinusoid contributes 1/2 (uniform phase). For Gabor filters the
/// envelope adds `E_gamma[f(gamma)^D]` with `f(gamma) = E_u[exp(-gamma u^2)]`,
/// `u = c - mu` triangular on `[-2, 2]` and `gamma` half-normal; both
/// integrals are evaluated by Simpson's rule.
pub fn filter_second_moment(filter: FilterKind, dims: usize) -> f64 {
    if filter == FilterKind::Sine {
        return 0.5;
    }
    let f = |gamma: f64| simpson(|u| 2.0 * (2.0 - u) / 4.0 * (-gamma * u * u).exp(), 0.0, 2.0, 400);
    let density = |g: f64| 2.0 * (-0.5 * g * g).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * simpson(|g| density(g) * f(g).powi(dims as i32), 0.0, 10.0, 400)
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn mask_on_tape<T: Real>(tape: &mut Tape<T>, kernel: Var, grid: &CoordinateGrid<T>, mu: Var, log_sigma: Var) -> Result<Var> {
    let k = tape.shape(kernel)[0];
    let c = tape.constant(grid.points().clone());
    let diff = tape.sub(c, mu)?;
    let neg = tape.neg(log_sigma);
    let inv_sigma = tape.exp(neg);
    let z = tape.mul(diff, inv_sigma)?;
    let z2 = tape.square(z);
    let s = tape.sum_axis(z2, 1)?;
    let s = tape.scale(s, T::lit(-0.5));
    let m = tape.exp(s);
    let m = tape.reshape(m, &[k, 1])?;
    tape.mul(kernel, m)
}

/// Multiply row `i` of `kernel: [K, C]` by
/// `exp(-1/2 * sum_d (c_{i,d} - mu_d)^2 / sigma_d^2)`.
pub fn apply_gaussian_mask<T: Real>(kernel: &Tensor<T>, grid: &CoordinateGrid<T>, mu: &[T], sigma: &[T]) -> Result<Tensor<T>> {
    let d = grid.dims();
    if mu.len() != d || sigma.len() != d {
        return Err(Error::dim("gaussian_mask", &[mu.len(), sigma.len()], &[d]));
    }
    if sigma.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::usage("mask sigma must be positive"));
    }
    if kernel.rank() != 2 || kernel.shape()[0] != grid.len() {
        return Err(Error::dim("gaussian_mask", kernel.shape(), &[grid.len()]));
    }
    let mut tape = Tape::new();
    let kv = tape.constant(kernel.clone());
    let muv = tape.constant(Tensor::new(vec![d], mu.to_vec())?);
    let ls = tape.constant(Tensor::new(vec![d], sigma.iter().map(|s| s.ln()).collect())?);
    let out = mask_on_tape(&mut tape, kv, grid, muv, ls)?;
    Ok(tape.value(out).clone())
}

impl<T: Real> Parameterized<T> for KernelGenerator<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        for filt in &self.filters {
            f(&filt.freq);
            f(&filt.phase);
            if let Some(p) = &filt.log_width {
                f(p);
            }
            if let Some(p) = &filt.center {
                f(p);
            }
        }
        for (w, b) in &self.hidden {
            f(w);
            f(b);
        }
        f(&self.out_w);
        f(&self.out_b);
        f(&self.mask_mu);
        f(&self.mask_log_sigma);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for filt in &mut self.filters {
            f(&mut filt.freq);
            f(&mut filt.phase);
            if let Some(p) = &mut filt.log_width {
                f(p);
            }
            if let Some(p) = &mut filt.center {
                f(p);
            }
        }
        for (w, b) in &mut self.hidden {
            f(w);
            f(b);
        }
        f(&mut self.out_w);
        f(&mut self.out_b);
        f(&mut self.mask_mu);
        f(&mut self.mask_log_sigma);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let g = CoordinateGrid::<f64>::regular(1, &[3], true).unwrap();
        assert_eq!(g.points().data(), &[-1.0, 0.0, 1.0]);
        let g = CoordinateGrid::<f64>::regular(1, &[2], false).unwrap();
        assert_eq!(g.points().data(), &[-1.0, 1.0]);
        let g = CoordinateGrid::<f64>::regular(2, &[3, 3], false).unwrap();
        assert_eq!(g.len(), 9);
        let pts: Vec<(f64, f64)> = g.points().data().chunks(2).map(|p| (p[0], p[1])).collect();
        for corner in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0), (0.0, 0.0)] {
            assert!(pts.contains(&corner));
        }
        assert!(matches!(CoordinateGrid::<f64>::regular(1, &[0], false), Err(Error::Usage(_))));
        assert!(CoordinateGrid::<f64>::regular(3, &[2, 2, 2], false).is_err());
    }

    #[test]
    fn regular_spacing_is_constant() {
        let g = CoordinateGrid::<f64>::regular(1, &[11], true).unwrap();
        let p = g.points().data();
        for w in p.windows(2) {
            assert!((w[1] - w[0] - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_peak_and_scalar_value() {
        let grid = CoordinateGrid::<f64>::regular(1, &[3], true).unwrap();
        let k = Tensor::ones(&[3, 2]);
        let m = apply_gaussian_mask(&k, &grid, &[0.0], &[1.0]).unwrap();
        // c = 0 is the peak; c = +-1 gives exp(-1/2).
        assert!((m.data()[2] - 1.0).abs() < 1e-15);
        assert!((m.data()[4] - (-0.5f64).exp()).abs() < 1e-15);
        assert!((m.data()[4] - 0.6065306597126334).abs() < 1e-15);
        assert!(apply_gaussian_mask(&k, &grid, &[0.0], &[0.0]).is_err());
        assert!(apply_gaussian_mask(&k, &grid, &[0.0], &[-1.0]).is_err());
    }

    #[test]
    fn second_moment_matches_monte_carlo() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        for dims in [1, 2] {
            let n = 400_000;
            let mut acc = 0.0;
            for _ in 0..n {
                let gamma: f64 = normal.sample(&mut rng);
                let mut d2 = 0.0;
                for _ in 0..dims {
                    let u: f64 = rng.random_range(-1.0..1.0) - rng.random_range(-1.0..1.0);
                    d2 += u * u;
                }
                let s = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI).sin();
                acc += (-gamma.abs() * d2).exp() * s * s;
            }
            let q = filter_second_moment(FilterKind::Gabor, dims);
            assert!((acc / n as f64 - q).abs() < 5e-3, "D={dims}: {} vs {q}", acc / n as f64);
        }
        assert_eq!(filter_second_moment(FilterKind::Sine, 2), 0.5);
    }

    #[test]
    fn rescale_formula() {
        let mut g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 8, 4, 10.0), 0).unwrap();
        g.rescale_last_layer(1.0, 1, 1).unwrap();
        assert_eq!(g.init_scale(), 1.0);
        g.rescale_last_layer(1.0, 110, 784).unwrap();
        assert!((g.init_scale() - 1.0 / 86240f64.sqrt()).abs() < 1e-15);
        assert!((g.init_scale() - 3.405e-3).abs() < 1e-6);
        assert!(g.rescale_last_layer(0.0, 1, 1).is_err());
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let g = KernelGenerator::<f64>::new(GeneratorConfig::new(2, 8, 4, 10.0), 0).unwrap();
        let grid = CoordinateGrid::regular(1, &[5], true).unwrap();
        assert!(matches!(g.generate(&grid), Err(Error::Usage(_))));
    }
}
