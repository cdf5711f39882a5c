//! Self-checks runnable without any dataset: gradients against finite
//! differences, FFT against direct convolution, initialization scale and
//! cross-resolution agreement. Everything runs in 64-bit.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Parameterized, Tape};
use crate::conv::{conv1d_direct, conv1d_fft, conv2d_direct, conv2d_fft, depthwise_conv, resolution_factor, ConvMode};
use crate::error::{Error, Result};
use crate::kernelgen::{CoordinateGrid, GeneratorConfig, KernelGenerator};
use crate::model::{Ccnn, CcnnConfig, ForwardOptions};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Grad,
    Fft,
    Init,
    Resolution,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "grad" => Suite::Grad,
            "fft" => Suite::Fft,
            "init" => Suite::Init,
            "resolution" => Suite::Resolution,
            "all" => Suite::All,
            _ => return Err(Error::usage(format!("unknown suite `{s}`; expected grad, fft, init, resolution or all"))),
        })
    }
}

/// Accepted range of an observed value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bound {
    AtMost(f64),
    AtLeast(f64),
    Within(f64, f64),
}

impl Bound {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Bound::AtMost(t) => v <= t,
            Bound::AtLeast(t) => v >= t,
            Bound::Within(lo, hi) => (lo..=hi).contains(&v),
        }
    }
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::AtMost(t) => write!(f, "<={t:e}"),
            Bound::AtLeast(t) => write!(f, ">={t:e}"),
            Bound::Within(lo, hi) => write!(f, "[{lo},{hi}]"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub bound: Bound,
}

impl Check {
    pub fn new(name: impl Into<String>, observed: f64, bound: Bound) -> Self {
        Check {
            name: name.into(),
            observed,
            bound,
        }
    }

    pub fn passed(&self) -> bool {
        self.bound.holds(self.observed)
    }
}

/// `PASS|FAIL name observed tolerance`
impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        write!(f, "{status} {} {:.6e} {}", self.name, self.observed, self.bound)
    }
}

pub fn run(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Grad | Suite::All) {
        out.extend(grad_suite()?);
    }
    if matches!(suite, Suite::Fft | Suite::All) {
        out.extend(fft_suite()?);
    }
    if matches!(suite, Suite::Init | Suite::All) {
        out.extend(init_suite()?);
    }
    if matches!(suite, Suite::Resolution | Suite::All) {
        out.extend(resolution_suite()?);
    }
    Ok(out)
}

fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| StandardNormal.sample(rng))
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

// ---- gradients ----

fn training_loss(net: &Ccnn<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<(Tape<f64>, crate::autodiff::Var)> {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let fwd = net.forward(&mut tape, x, &ForwardOptions::train(), &mut rng)?;
    let loss = tape.cross_entropy(fwd.logits, labels)?;
    Ok((tape, loss))
}

fn nudge(net: &mut Ccnn<f64>, name: &str, i: usize, delta: f64) {
    net.visit_params_mut(&mut |p| {
        if p.name == name {
            p.value.data_mut()[i] += delta;
        }
    });
}

/// Relative error per parameter tensor between the tape gradient and central
/// differences, `|g - fd| / max(|g|, |fd|, 1e-6)` in the 2-norm. The floor
/// covers tensors whose exact gradient is zero, such as biases whose shift a
/// following batch norm removes; there both sides are round-off (~1e-11 for
/// a step of 1e-5).
pub fn model_gradient_errors(mut net: Ccnn<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<Vec<(String, f64)>> {
    let (tape, loss) = training_loss(&net, x, labels)?;
    let grads = tape.backward(loss)?;
    let mut names = Vec::new();
    net.visit_params(&mut |p| names.push((p.name.clone(), p.value.len())));
    let h = 1e-5;
    let mut errors = Vec::new();
    for (name, len) in names {
        let g = grads
            .param(&name)
            .ok_or_else(|| Error::usage(format!("no gradient for {name}")))?
            .data()
            .to_vec();
        let mut fd = vec![0.0; len];
        for (i, d) in fd.iter_mut().enumerate() {
            nudge(&mut net, &name, i, h);
            let (t, l) = training_loss(&net, x, labels)?;
            let up = t.value(l).item();
            nudge(&mut net, &name, i, -2.0 * h);
            let (t, l) = training_loss(&net, x, labels)?;
            let down = t.value(l).item();
            nudge(&mut net, &name, i, h);
            *d = (up - down) / (2.0 * h);
        }
        let diff = l2(g.iter().zip(&fd).map(|(a, b)| a - b));
        let scale = l2(g.iter().copied()).max(l2(fd.iter().copied())).max(1e-6);
        errors.push((name, diff / scale));
    }
    Ok(errors)
}

fn grad_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for extent in [vec![16], vec![9, 9]] {
        let mut cfg = CcnnConfig::new(1, 4, &extent, 3);
        cfg.seed = 3;
        let net = Ccnn::<f64>::build(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut shape = vec![4, 1];
        shape.extend(&extent);
        let x = normal(&shape, &mut rng);
        let labels = [0, 1, 2, 1];
        let errors = model_gradient_errors(net, &x, &labels)?;
        let err = errors.iter().map(|e| e.1).fold(0.0, f64::max);
        let tag = extent.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("x");
        out.push(Check::new(format!("grad.ccnn_1_4.{tag}"), err, Bound::AtMost(1e-4)));
    }
    Ok(out)
}

// ---- convolution theorem ----

fn fft_suite() -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for len in [16, 257, 1024, 4096] {
        let x = normal(&[1, 2, len], &mut rng);
        let k = normal(&[3, 2, len], &mut rng);
        let d = conv1d_fft(&x, &k, true)?.max_abs_diff(&conv1d_direct(&x, &k, true)?)?;
        out.push(Check::new(format!("fft.1d.{len}"), d, Bound::AtMost(1e-10)));
    }
    for (side, ks) in [(9, 9), (32, 31)] {
        let x = normal(&[1, 2, side, side], &mut rng);
        let k = normal(&[3, 2, ks, ks], &mut rng);
        let d = conv2d_fft(&x, &k)?.max_abs_diff(&conv2d_direct(&x, &k)?)?;
        out.push(Check::new(format!("fft.2d.{side}x{side}"), d, Bound::AtMost(1e-10)));
    }
    Ok(out)
}

// ---- initialization ----

/// Standard deviation of evaluation-mode logits of a freshly built network on
/// a standard normal batch.
pub fn init_logit_std(cfg: CcnnConfig, batch: usize) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut shape = vec![batch, cfg.in_channels];
    shape.extend(&cfg.input_extent);
    let x = normal(&shape, &mut rng);
    let logits = Ccnn::<f64>::build(cfg)?.logits(&x)?;
    Ok((variance(logits.data()).sqrt(), logits.max_abs()))
}

fn init_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut worst_scaled: (f64, f64) = (f64::INFINITY, 0.0);
    let mut worst_raw: (f64, f64) = (f64::INFINITY, 0.0);
    let grid = CoordinateGrid::<f64>::regular(1, &[784], true)?;
    let target = 1.0 / (110.0 * 784.0);
    for seed in 0..20 {
        let mut g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 32, 110, 30.0), seed)?;
        let raw = variance(g.generate(&grid)?.data());
        g.rescale_last_layer(1.0, 110, 784)?;
        let scaled = variance(g.generate(&grid)?.data()) / target;
        worst_raw = (worst_raw.0.min(raw), worst_raw.1.max(raw));
        worst_scaled = (worst_scaled.0.min(scaled), worst_scaled.1.max(scaled));
    }
    let third = Bound::Within(1.0 / 3.0, 3.0);
    out.push(Check::new("init.kernel_var_rescaled.min", worst_scaled.0, third));
    out.push(Check::new("init.kernel_var_rescaled.max", worst_scaled.1, third));
    out.push(Check::new("init.kernel_var_raw.min", worst_raw.0, third));
    out.push(Check::new("init.kernel_var_raw.max", worst_raw.1, third));

    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for seed in 0..10 {
        let mut cfg = CcnnConfig::ccnn_4_110(&[784], 10);
        cfg.seed = seed;
        let (std, _) = init_logit_std(cfg, 8)?;
        lo = lo.min(std);
        hi = hi.max(std);
    }
    out.push(Check::new("init.logit_std_corrected.min", lo, Bound::Within(0.2, 5.0)));
    out.push(Check::new("init.logit_std_corrected.max", hi, Bound::Within(0.2, 5.0)));

    let mut cfg = CcnnConfig::ccnn_4_110(&[784], 10);
    cfg.corrected_init = false;
    let (_, max) = init_logit_std(cfg, 8)?;
    out.push(Check::new("init.logit_max_uncorrected", max, Bound::AtLeast(1e4)));
    Ok(out)
}

// ---- cross-resolution agreement ----

fn smooth_signal(t: f64, channel: usize) -> f64 {
    let c = channel as f64;
    (std::f64::consts::TAU * (1.0 + c) * t).sin() + 0.5 * (std::f64::consts::TAU * 3.0 * t + 0.3 * c).cos()
}

/// Relative disagreement between a causal convolution at `k` samples and at
/// `2k` samples of the same signal, the fine response rescaled by
/// `(r_train/r_test)^1 = 1/2` and read at the shared time points. Kernel
/// coordinates `1 - 2j/k` (lag `j`) are shared by both grids.
pub fn resolution_error_1d(k: usize, omega0: f64, seed: u64) -> Result<f64> {
    let channels = 4;
    let g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 32, channels, omega0), seed)?;
    let respond = |n: usize| -> Result<Tensor<f64>> {
        // ascending coordinates; the last one (lag 0) is +1
        let coords: Vec<f64> = (0..n).map(|m| 1.0 - 2.0 * (n - 1 - m) as f64 / n as f64).collect();
        let grid = CoordinateGrid::from_points(Tensor::new(vec![n, 1], coords)?)?;
        let kern = g.generate_masked(&grid)?.permute(&[1, 0])?;
        let x = Tensor::from_fn(&[1, channels, n], |i| smooth_signal((i % n) as f64 / n as f64, i / n));
        depthwise_conv(&x, &kern, ConvMode::Causal, true)
    };
    let coarse = respond(k)?;
    let fine = respond(2 * k)?;
    let f = resolution_factor(k as f64, 2.0 * k as f64, 1)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for c in 0..channels {
        for i in 0..k {
            let a = coarse.data()[c * k + i];
            let b = f * fine.data()[c * 2 * k + 2 * i];
            diff += (a - b) * (a - b);
            norm += a * a;
        }
    }
    Ok((diff / norm).sqrt())
}

/// Ratio of mean absolute responses (fine / coarse) at shared points for a
/// centered 2D convolution on nested `n` and `2n - 1` grids over `[-1, 1]²`,
/// with and without the `(r_train/r_test)^2` factor.
pub fn resolution_ratio_2d(n: usize, omega0: f64, seed: u64) -> Result<(f64, f64)> {
    let channels = 2;
    let g = KernelGenerator::<f64>::new(GeneratorConfig::new(2, 32, channels, omega0), seed)?;
    let respond = |n: usize| -> Result<Tensor<f64>> {
        let grid = CoordinateGrid::<f64>::regular(2, &[n, n], false)?;
        let kern = g.generate_masked(&grid)?.permute(&[1, 0])?.reshape(&[channels, n, n])?;
        let step = 2.0 / (n - 1) as f64;
        let x = Tensor::from_fn(&[1, channels, n, n], |i| {
            let (c, r, col) = (i / (n * n), (i / n) % n, i % n);
            let (u, v) = (-1.0 + step * r as f64, -1.0 + step * col as f64);
            (1.5 * u + 0.5 * c as f64).cos() * (2.0 * v).sin() + 0.5
        });
        depthwise_conv(&x, &kern, ConvMode::Centered, true)
    };
    let fine_n = 2 * n - 1;
    let coarse = respond(n)?;
    let fine = respond(fine_n)?;
    let (mut a, mut b) = (0.0, 0.0);
    for c in 0..channels {
        for r in 0..n {
            for col in 0..n {
                a += coarse.data()[(c * n + r) * n + col].abs();
                b += fine.data()[(c * fine_n + 2 * r) * fine_n + 2 * col].abs();
            }
        }
    }
    let ratio = b / a;
    let f = resolution_factor((n - 1) as f64, (fine_n - 1) as f64, 2)?;
    Ok((ratio, ratio * f))
}

fn resolution_suite() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let mut worst = 0.0f64;
    for seed in 0..5 {
        worst = worst.max(resolution_error_1d(128, 30.0, seed)?);
    }
    out.push(Check::new("resolution.1d.k128_vs_256.rel_err", worst, Bound::AtMost(0.05)));
    // worst deviation over seeds
    let (mut omitted, mut applied) = (4.0f64, 1.0f64);
    for seed in 0..3 {
        let (o, a) = resolution_ratio_2d(33, 30.0, seed)?;
        if (o - 4.0).abs() > (omitted - 4.0).abs() {
            omitted = o;
        }
        if (a - 1.0).abs() > (applied - 1.0).abs() {
            applied = a;
        }
    }
    out.push(Check::new("resolution.2d.factor_omitted.ratio", omitted, Bound::Within(3.5, 4.5)));
    out.push(Check::new("resolution.2d.factor_applied.ratio", applied, Bound::Within(0.875, 1.125)));
    Ok(out)
}
