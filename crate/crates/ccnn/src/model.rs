//! The CCNN: pointwise stem, pre-norm residual blocks around depthwise-separable
//! continuous convolutions, final norm, global average pooling and a linear
//! classifier.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Param, Parameterized, Tape, Var};
use crate::conv::{ConvLayerSpec, ConvMode, SeparableConv};
use crate::error::{Error, Result};
use crate::kernelgen::{kernel_csv, CoordinateGrid, FilterKind, GeneratorConfig, KernelGenerator};
use crate::tensor::{Real, Tensor};

pub const NORM_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Batch statistics while training, running statistics at evaluation.
    Batch,
    /// Per-position statistics over channels.
    Layer,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(NormKind::Batch),
            "layer" => Ok(NormKind::Layer),
            _ => Err(Error::usage(format!("unknown norm `{s}` (expected batch or layer)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CcnnConfig {
    pub n_blocks: usize,
    pub channels: usize,
    pub dims: usize,
    pub in_channels: usize,
    pub n_classes: usize,
    pub dropout: f64,
    pub kg_hidden: usize,
    pub omega0: f64,
    pub seed: u64,
    pub norm: NormKind,
    pub filter: FilterKind,
    /// Spatial extent of the training inputs; sets the kernel size used by
    /// the initialization correction.
    pub input_extent: Vec<usize>,
    /// Fixed kernel extent per axis; `None` for kernels as large as the input.
    pub kernel_points: Option<Vec<usize>>,
    /// Apply the last-layer rescaling of every kernel generator.
    pub corrected_init: bool,
}

impl CcnnConfig {
    /// A network with `n_blocks` blocks of `channels` channels and 32 hidden
    /// generator units.
    pub fn new(n_blocks: usize, channels: usize, input_extent: &[usize], n_classes: usize) -> Self {
        CcnnConfig {
            n_blocks,
            channels,
            dims: input_extent.len(),
            in_channels: 1,
            n_classes,
            dropout: 0.0,
            kg_hidden: 32,
            omega0: 30.0,
            seed: 0,
            norm: NormKind::Batch,
            filter: FilterKind::Gabor,
            input_extent: input_extent.to_vec(),
            kernel_points: None,
            corrected_init: true,
        }
    }

    /// 4 blocks, 110 channels, 32 hidden generator units.
    pub fn ccnn_4_110(input_extent: &[usize], n_classes: usize) -> Self {
        CcnnConfig {
            dropout: 0.1,
            ..Self::new(4, 110, input_extent, n_classes)
        }
    }

    /// 6 blocks, 380 channels, 64 hidden generator units.
    pub fn ccnn_6_380(input_extent: &[usize], n_classes: usize) -> Self {
        CcnnConfig {
            dropout: 0.1,
            kg_hidden: 64,
            ..Self::new(6, 380, input_extent, n_classes)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 || self.channels == 0 || self.in_channels == 0 || self.n_classes == 0 {
            return Err(Error::usage("blocks, channels, input channels and classes must be >= 1"));
        }
        if !(1..=2).contains(&self.dims) || self.input_extent.len() != self.dims {
            return Err(Error::usage(format!(
                "dims must be 1 or 2 and match input_extent {:?}",
                self.input_extent
            )));
        }
        if self.input_extent.iter().any(|&n| n == 0) {
            return Err(Error::usage("input extents must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::usage(format!("dropout must be in [0, 1), got {}", self.dropout)));
        }
        self.conv_spec().validate()
    }

    pub fn conv_spec(&self) -> ConvLayerSpec {
        ConvLayerSpec {
            kernel_points: self.kernel_points.clone(),
            ..ConvLayerSpec::separable(self.dims, self.channels, self.channels)
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            filter: self.filter,
            ..GeneratorConfig::new(self.dims, self.kg_hidden, self.channels, self.omega0)
        }
    }
}

/// Per-channel affine normalization with optional running statistics.
#[derive(Clone, Debug)]
pub struct Norm<T: Real> {
    pub kind: NormKind,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
}

impl<T: Real> Norm<T> {
    fn new(kind: NormKind, prefix: &str, c: usize) -> Self {
        Norm {
            kind,
            gamma: Param::new(format!("{prefix}.gamma"), Tensor::ones(&[c]), false),
            beta: Param::new(format!("{prefix}.beta"), Tensor::zeros(&[c]), false),
            running_mean: vec![T::zero(); c],
            running_var: vec![T::one(); c],
        }
    }

    /// `x: [rows, C]`. Returns batch statistics when they were used.
    fn forward(&self, tape: &mut Tape<T>, x: Var, train: bool) -> Result<(Var, Option<BatchStats<T>>)> {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        let eps = T::lit(NORM_EPS);
        match (self.kind, train) {
            (NormKind::Layer, _) => Ok((tape.layer_norm(x, g, b, eps)?, None)),
            (NormKind::Batch, true) => {
                let rows = tape.shape(x)[0];
                let (y, mean, var) = tape.batch_norm(x, g, b, eps)?;
                Ok((y, Some(BatchStats { mean, var, count: rows })))
            }
            (NormKind::Batch, false) => {
                let c = self.running_mean.len();
                let mean = tape.constant(Tensor::new(vec![c], self.running_mean.clone())?);
                let inv = self.running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let inv = tape.constant(Tensor::new(vec![c], inv)?);
                let centered = tape.sub(x, mean)?;
                let h = tape.mul(centered, inv)?;
                let h = tape.mul(h, g)?;
                Ok((tape.add(h, b)?, None))
            }
        }
    }

    fn update(&mut self, s: &BatchStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        let n = s.count as f64;
        let unbias = T::lit(if n > 1.0 { n / (n - 1.0) } else { 1.0 });
        for j in 0..self.running_mean.len() {
            self.running_mean[j] = (T::one() - m) * self.running_mean[j] + m * s.mean[j];
            self.running_var[j] = (T::one() - m) * self.running_var[j] + m * s.var[j] * unbias;
        }
    }
}

/// Batch statistics of one normalization layer during a training pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased variance.
    pub var: Vec<T>,
    pub count: usize,
}

/// `h + W2 Dropout(GELU(SeparableConv(Norm(h)))) + b2`
#[derive(Clone, Debug)]
pub struct ResidualBlock<T: Real> {
    pub norm: Norm<T>,
    pub conv: SeparableConv<T>,
    pub linear_w: Param<T>,
    pub linear_b: Param<T>,
}

#[derive(Clone, Debug)]
pub struct Ccnn<T: Real> {
    config: CcnnConfig,
    pub stem_w: Param<T>,
    pub stem_b: Param<T>,
    pub blocks: Vec<ResidualBlock<T>>,
    pub final_norm: Norm<T>,
    pub head_w: Param<T>,
    pub head_b: Param<T>,
}

/// Options of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    /// Dropout and batch statistics on.
    pub train: bool,
    /// Multiplier on every channel-wise convolution output (resolution
    /// changes).
    pub conv_scale: Option<f64>,
    /// Multiplier on every residual branch; `Some(0.0)` turns each block into
    /// the identity.
    pub branch_gain: Option<f64>,
}

impl ForwardOptions {
    pub fn train() -> Self {
        ForwardOptions {
            train: true,
            ..Default::default()
        }
    }

    pub fn eval() -> Self {
        Self::default()
    }
}

pub struct ForwardOutput<T> {
    /// `[B, n_classes]`
    pub logits: Var,
    /// Statistics of every batch-norm layer used, in model order.
    pub batch_stats: Vec<BatchStats<T>>,
}

/// Trainable scalars per part of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    pub stem: usize,
    /// Block parameters outside the kernel generators.
    pub blocks: usize,
    pub generators: usize,
    /// Final norm and linear classifier.
    pub classifier: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.stem + self.blocks + self.generators + self.classifier
    }
}

fn linear_params<T: Real>(prefix: &str, n_out: usize, n_in: usize, rng: &mut impl Rng) -> (Param<T>, Param<T>) {
    let bound = 1.0 / (n_in as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("bound");
    let w = Tensor::from_fn(&[n_out, n_in], |_| T::lit(u.sample(rng)));
    let b = Tensor::from_fn(&[n_out], |_| T::lit(u.sample(rng)));
    (
        Param::new(format!("{prefix}.weight"), w, true),
        Param::new(format!("{prefix}.bias"), b, false),
    )
}

/// Classifier weights with variance gain^2 / fan_in (gain 1), the same target
/// the kernel generators are rescaled to.
fn head_params<T: Real>(n_out: usize, n_in: usize, rng: &mut impl Rng) -> (Param<T>, Param<T>) {
    let (w, b) = linear_params("head", n_out, n_in, rng);
    let s = T::lit(3f64.sqrt());
    (Param::new(w.name.clone(), w.value.map(|v| v * s), true), b)
}

fn count<T: Real>(p: &impl Parameterized<T>) -> usize {
    p.param_count()
}

impl<T: Real> Ccnn<T> {
    /// Build and initialize a network; all randomness comes from `config.seed`.
    pub fn build(config: CcnnConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let c = config.channels;
        let (stem_w, stem_b) = linear_params("stem", c, config.in_channels, &mut rng);
        let spec = config.conv_spec();
        let kernel_size: usize = spec.kernel_extent(&config.input_extent).iter().product();
        let mut blocks = Vec::with_capacity(config.n_blocks);
        for i in 0..config.n_blocks {
            let p = format!("blocks.{i}");
            let mut generator = KernelGenerator::with_rng(config.generator_config(), &format!("{p}.conv.kernel"), &mut rng)?;
            if config.corrected_init {
                generator.rescale_last_layer(1.0, c, kernel_size)?;
            }
            let (pw, pb) = linear_params(&format!("{p}.conv.pointwise"), c, c, &mut rng);
            let conv = SeparableConv::new(spec.clone(), generator, pw, pb)?;
            let (linear_w, linear_b) = linear_params(&format!("{p}.linear"), c, c, &mut rng);
            blocks.push(ResidualBlock {
                norm: Norm::new(config.norm, &format!("{p}.norm"), c),
                conv,
                linear_w,
                linear_b,
            });
        }
        let (head_w, head_b) = head_params(config.n_classes, c, &mut rng);
        Ok(Ccnn {
            final_norm: Norm::new(config.norm, "final_norm", c),
            config,
            stem_w,
            stem_b,
            blocks,
            head_w,
            head_b,
        })
    }

    /// Masked kernels of every block on the grid used for inputs of extent
    /// `spatial`, as CSV (see [`kernel_csv`]).
    pub fn kernel_dumps(&self, spatial: &[usize]) -> Result<Vec<String>> {
        let spec = self.config.conv_spec();
        let grid = CoordinateGrid::regular(spec.dims, &spec.kernel_extent(spatial), spec.mode == ConvMode::Causal)?;
        self.blocks
            .iter()
            .map(|b| kernel_csv(&grid, &b.conv.generator.generate_masked(&grid)?))
            .collect()
    }

    pub fn config(&self) -> &CcnnConfig {
        &self.config
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        let mut b = ParamBreakdown {
            stem: self.stem_w.value.len() + self.stem_b.value.len(),
            blocks: 0,
            generators: 0,
            classifier: self.head_w.value.len() + self.head_b.value.len(),
        };
        b.classifier += self.final_norm.gamma.value.len() + self.final_norm.beta.value.len();
        for blk in &self.blocks {
            let g = count(&blk.conv.generator);
            b.generators += g;
            b.blocks += count(&blk.conv) - g
                + blk.norm.gamma.value.len()
                + blk.norm.beta.value.len()
                + blk.linear_w.value.len()
                + blk.linear_b.value.len();
        }
        b
    }

    /// Record a forward pass of `x: [B, C_in, s..]` on `tape`.
    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, opts: &ForwardOptions, rng: &mut dyn RngCore) -> Result<ForwardOutput<T>> {
        let cfg = &self.config;
        if x.rank() != cfg.dims + 2 || x.shape()[1] != cfg.in_channels {
            return Err(Error::usage(format!(
                "expected input [B, {}, {}], got {:?}",
                cfg.in_channels,
                if cfg.dims == 1 { "L" } else { "H, W" },
                x.shape()
            )));
        }
        let b = x.shape()[0];
        let spatial = x.shape()[2..].to_vec();
        let rows: usize = b * spatial.iter().product::<usize>();
        let c = cfg.channels;
        let mut grid_shape = vec![b];
        grid_shape.extend(&spatial);
        grid_shape.push(c);
        let conv_scale = opts.conv_scale.map(T::lit);
        let mut stats = Vec::new();

        let xv = tape.constant(x.channels_last()?.reshape(&[rows, cfg.in_channels])?);
        let (sw, sb) = (tape.param(&self.stem_w), tape.param(&self.stem_b));
        let mut h = tape.linear(xv, sw, sb)?;
        for blk in &self.blocks {
            let (n, s) = blk.norm.forward(tape, h, opts.train)?;
            stats.extend(s);
            let n = tape.reshape(n, &grid_shape)?;
            let y = blk.conv.forward(tape, n, conv_scale)?;
            let y = tape.reshape(y, &[rows, c])?;
            let mut y = tape.gelu(y);
            if opts.train && cfg.dropout > 0.0 {
                let keep = 1.0 - cfg.dropout;
                let mask = Tensor::from_fn(&[rows, c], |_| {
                    if rng.random::<f64>() < keep {
                        T::lit(1.0 / keep)
                    } else {
                        T::zero()
                    }
                });
                let m = tape.constant(mask);
                y = tape.mul(y, m)?;
            }
            let (w, bb) = (tape.param(&blk.linear_w), tape.param(&blk.linear_b));
            let mut y = tape.linear(y, w, bb)?;
            if let Some(gain) = opts.branch_gain {
                y = tape.scale(y, T::lit(gain));
            }
            h = tape.add(h, y)?;
        }
        let (n, s) = self.final_norm.forward(tape, h, opts.train)?;
        stats.extend(s);
        let n = tape.reshape(n, &[b, rows / b, c])?;
        let pooled = tape.mean_axis(n, 1)?;
        let (hw, hb) = (tape.param(&self.head_w), tape.param(&self.head_b));
        let logits = tape.linear(pooled, hw, hb)?;
        Ok(ForwardOutput { logits, batch_stats: stats })
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.logits_with(x, &ForwardOptions::eval())
    }

    pub fn logits_with(&self, x: &Tensor<T>, opts: &ForwardOptions) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(&mut tape, x, opts, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Fold batch statistics from a training pass into the running estimates.
    pub fn update_running_stats(&mut self, stats: &[BatchStats<T>]) {
        let norms = self
            .blocks
            .iter_mut()
            .map(|b| &mut b.norm)
            .chain(std::iter::once(&mut self.final_norm))
            .filter(|n| n.kind == NormKind::Batch);
        for (n, s) in norms.zip(stats) {
            n.update(s);
        }
    }

    /// Non-trainable state saved with the parameters: `(name, values)`.
    pub fn buffers(&self) -> Vec<(String, Vec<T>)> {
        let mut out = Vec::new();
        for (name, n) in self.named_norms() {
            out.push((format!("{name}.running_mean"), n.running_mean.clone()));
            out.push((format!("{name}.running_var"), n.running_var.clone()));
        }
        out
    }

    pub fn set_buffer(&mut self, name: &str, values: &[T]) -> Result<()> {
        let c = self.config.channels;
        let target = name
            .strip_suffix(".running_mean")
            .map(|p| (p, true))
            .or_else(|| name.strip_suffix(".running_var").map(|p| (p, false)))
            .ok_or_else(|| Error::format("buffer", format!("unknown buffer {name}")))?;
        if values.len() != c {
            return Err(Error::format(name, format!("expected {c} values, got {}", values.len())));
        }
        let norm = if target.0 == "final_norm" {
            &mut self.final_norm
        } else {
            let i: usize = target
                .0
                .strip_prefix("blocks.")
                .and_then(|r| r.strip_suffix(".norm"))
                .and_then(|i| i.parse().ok())
                .filter(|&i| i < self.blocks.len())
                .ok_or_else(|| Error::format("buffer", format!("unknown buffer {name}")))?;
            &mut self.blocks[i].norm
        };
        if target.1 {
            norm.running_mean = values.to_vec();
        } else {
            norm.running_var = values.to_vec();
        }
        Ok(())
    }

    fn named_norms(&self) -> Vec<(String, &Norm<T>)> {
        let mut v: Vec<_> = self
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| (format!("blocks.{i}.norm"), &b.norm))
            .collect();
        v.push(("final_norm".into(), &self.final_norm));
        v
    }

    /// Turn the generator rescaling on or off for every block (ablations).
    pub fn set_corrected_init(&mut self, on: bool) -> Result<()> {
        let c = self.config.channels;
        let k: usize = self.config.conv_spec().kernel_extent(&self.config.input_extent).iter().product();
        for blk in &mut self.blocks {
            if on {
                blk.conv.generator.rescale_last_layer(1.0, c, k)?;
            } else {
                blk.conv.generator.set_init_scale(1.0);
            }
        }
        self.config.corrected_init = on;
        Ok(())
    }
}

impl<T: Real> Parameterized<T> for Ccnn<T> {
    fn visit_params(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.stem_w);
        f(&self.stem_b);
        for blk in &self.blocks {
            f(&blk.norm.gamma);
            f(&blk.norm.beta);
            blk.conv.visit_params(f);
            f(&blk.linear_w);
            f(&blk.linear_b);
        }
        f(&self.final_norm.gamma);
        f(&self.final_norm.beta);
        f(&self.head_w);
        f(&self.head_b);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.stem_w);
        f(&mut self.stem_b);
        for blk in &mut self.blocks {
            f(&mut blk.norm.gamma);
            f(&mut blk.norm.beta);
            blk.conv.visit_params_mut(f);
            f(&mut blk.linear_w);
            f(&mut blk.linear_b);
        }
        f(&mut self.final_norm.gamma);
        f(&mut self.final_norm.beta);
        f(&mut self.head_w);
        f(&mut self.head_b);
    }
}
