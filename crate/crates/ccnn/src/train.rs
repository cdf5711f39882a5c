//! AdamW, the warmup + cosine schedule and the training loop.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Parameterized, Tape, Var};
use crate::checkpoint;
use crate::conv::resolution_factor;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{Ccnn, ForwardOptions};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub warmup_epochs: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 0.01,
            weight_decay: 1e-6,
            betas: (0.9, 0.999),
            eps: 1e-8,
            warmup_epochs: 10.0,
            epochs: 210,
            batch_size: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0) {
            return Err(Error::usage(format!("lr must be positive, got {}", self.lr_max)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::usage("epochs and batch size must be >= 1"));
        }
        if self.weight_decay < 0.0 || self.warmup_epochs < 0.0 {
            return Err(Error::usage("weight decay and warmup must be nonnegative"));
        }
        Ok(())
    }
}

/// Learning rate for step `step` (0-based) of epoch `epoch`.
///
/// Training progress is measured in fractional epochs `p = epoch +
/// step / steps_per_epoch`. The rate ramps linearly from 0 at `p = 0` to
/// `lr_max` at the end of warmup, then follows a half cosine that reaches 0
/// at the last step. Warmup longer than half the run is clamped to half.
pub fn lr_at(epoch: usize, step: usize, steps_per_epoch: usize, cfg: &TrainConfig) -> f64 {
    let spe = steps_per_epoch.max(1) as f64;
    let p = epoch as f64 + step as f64 / spe;
    let end = cfg.epochs as f64 - 1.0 / spe;
    let warm = cfg.warmup_epochs.min(0.5 * cfg.epochs as f64);
    if p < warm {
        return cfg.lr_max * p / warm;
    }
    if end <= warm {
        return cfg.lr_max;
    }
    let t = ((p - warm) / (end - warm)).min(1.0);
    0.5 * cfg.lr_max * (1.0 + (std::f64::consts::PI * t).cos())
}

/// One AdamW update of a flat array. `t` is the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adamw_update<T: Real>(theta: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, wd: f64, cfg: &TrainConfig) {
    let (b1, b2) = cfg.betas;
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    let (b1t, b2t) = (T::lit(b1), T::lit(b2));
    let decay = T::lit(1.0 - lr * wd);
    let (lr_t, c1, c2, eps) = (T::lit(lr), T::lit(c1), T::lit(c2), T::lit(cfg.eps));
    for i in 0..theta.len() {
        let g = grad[i];
        m[i] = b1t * m[i] + (T::one() - b1t) * g;
        v[i] = b2t * v[i] + (T::one() - b2t) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        theta[i] = theta[i] * decay - lr_t * mhat / (vhat.sqrt() + eps);
    }
}

/// Moment estimates per named parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamW<T> {
    state: HashMap<String, (Vec<T>, Vec<T>)>,
    pub step: u64,
}

impl<T: Real> AdamW<T> {
    pub fn new() -> Self {
        AdamW {
            state: HashMap::new(),
            step: 0,
        }
    }

    /// Update every parameter that received a gradient. Weight decay only
    /// applies to parameters flagged for it.
    pub fn step(&mut self, model: &mut impl Parameterized<T>, grads: &Gradients<T>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step;
        let state = &mut self.state;
        model.visit_params_mut(&mut |p| {
            let Some(g) = grads.param(&p.name) else { return };
            let n = p.value.len();
            let (m, v) = state
                .entry(p.name.clone())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let wd = if p.decay { cfg.weight_decay } else { 0.0 };
            adamw_update(p.value.data_mut(), g.data(), m, v, t, lr, wd, cfg);
        });
    }
}

/// Mean cross-entropy of `logits: [B, n]`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    tape.cross_entropy(logits, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub step: u64,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,step,split,loss,accuracy,lr,seconds";

impl MetricRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.6},{:.6e},{:.3}",
            self.epoch, self.step, self.split, self.loss, self.accuracy, self.lr, self.seconds
        )
    }
}

/// Where training writes artifacts.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
    /// Extra fields stored in checkpoint headers.
    pub meta: serde_json::Value,
}

pub struct TrainReport<T: Real> {
    pub metrics: Vec<MetricRow>,
    pub best_val_accuracy: f64,
    pub best_epoch: usize,
    /// Parameters at the best validation accuracy.
    pub best: Ccnn<T>,
}

/// Loss and accuracy of `net` in evaluation mode.
pub fn evaluate<T: Real>(net: &Ccnn<T>, data: &Dataset, batch_size: usize, opts: &ForwardOptions) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::usage("cannot evaluate an empty dataset"));
    }
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, y) = data.batch::<T>(chunk)?;
        let mut tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = net.forward(&mut tape, &x, opts, &mut rng)?;
        let l = tape.cross_entropy(out.logits, &y)?;
        loss += tape.value(l).item().as_f64() * chunk.len() as f64;
        correct += count_correct(tape.value(out.logits).data(), &y);
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

fn count_correct<T: Real>(logits: &[T], labels: &[usize]) -> usize {
    let n = logits.len() / labels.len();
    labels
        .iter()
        .enumerate()
        .filter(|(i, &l)| {
            let row = &logits[i * n..(i + 1) * n];
            let arg = (0..n).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            arg == l
        })
        .count()
}

/// Train `net` on `train`, selecting on `val`. Deterministic given
/// `cfg.seed` within one precision (the `seconds` column aside).
pub fn train_loop<T: Real>(net: &mut Ccnn<T>, train: &Dataset, val: &Dataset, cfg: &TrainConfig, out: &TrainOutputs) -> Result<TrainReport<T>> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::usage("training and validation sets must be nonempty"));
    }
    let mut csv = match &out.dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_HEADER}")?;
            Some(f)
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let steps = train.len().div_ceil(cfg.batch_size);
    let mut metrics = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0usize, net.clone());
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut lr) = (0.0, 0usize, 0.0);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            lr = lr_at(epoch, step, steps, cfg);
            let (x, y) = train.batch::<T>(chunk)?;
            let mut tape = Tape::new();
            let fwd = net.forward(&mut tape, &x, &ForwardOptions::train(), &mut rng)?;
            let loss = tape.cross_entropy(fwd.logits, &y)?;
            let lv = tape.value(loss).item().as_f64();
            if !lv.is_finite() {
                return Err(Error::Divergence { epoch, step, loss: lv });
            }
            loss_sum += lv * chunk.len() as f64;
            correct += count_correct(tape.value(fwd.logits).data(), &y);
            let grads = tape.backward(loss)?;
            drop(tape);
            opt.step(net, &grads, lr, cfg);
            net.update_running_stats(&fwd.batch_stats);
        }
        let train_row = MetricRow {
            epoch,
            step: opt.step,
            split: "train".into(),
            loss: loss_sum / train.len() as f64,
            accuracy: correct as f64 / train.len() as f64,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        let (vl, va) = evaluate(net, val, cfg.batch_size, &ForwardOptions::eval())?;
        let val_row = MetricRow {
            split: "val".into(),
            loss: vl,
            accuracy: va,
            seconds: start.elapsed().as_secs_f64(),
            ..train_row.clone()
        };
        log::info!(
            "epoch {epoch}: train loss {:.4} acc {:.4} | val loss {vl:.4} acc {va:.4} | lr {lr:.2e}",
            train_row.loss,
            train_row.accuracy
        );
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", train_row.csv())?;
            writeln!(f, "{}", val_row.csv())?;
            f.flush()?;
        }
        metrics.push(train_row);
        metrics.push(val_row);
        if va > best.0 {
            best = (va, epoch, net.clone());
            if let Some(dir) = &out.dir {
                save_checkpoint(net, out, epoch, &dir.join("best.ckpt"))?;
            }
        }
    }
    if let Some(dir) = &out.dir {
        save_checkpoint(net, out, cfg.epochs - 1, &dir.join("final.ckpt"))?;
    }
    Ok(TrainReport {
        metrics,
        best_val_accuracy: best.0,
        best_epoch: best.1,
        best: best.2,
    })
}

/// Test accuracies at the training resolution and at a resolution lowered
/// by `factor`, the latter with and without the `(r_train/r_test)^D` scale
/// on every channel-wise convolution.
#[derive(Clone, Debug, Serialize)]
pub struct ResolutionReport {
    pub factor: usize,
    pub conv_scale: f64,
    pub accuracy_train_resolution: f64,
    pub accuracy_shifted: f64,
    pub accuracy_shifted_unscaled: f64,
}

pub fn resolution_test<T: Real>(net: &Ccnn<T>, at_train: &Dataset, shifted: &Dataset, factor: usize, batch_size: usize) -> Result<ResolutionReport> {
    let dims = net.config().dims;
    let conv_scale = resolution_factor(factor as f64, 1.0, dims)?;
    let (_, base) = evaluate(net, at_train, batch_size, &ForwardOptions::eval())?;
    let scaled = ForwardOptions {
        conv_scale: (factor != 1).then_some(conv_scale),
        ..ForwardOptions::eval()
    };
    let (_, acc) = evaluate(net, shifted, batch_size, &scaled)?;
    let (_, raw) = evaluate(net, shifted, batch_size, &ForwardOptions::eval())?;
    Ok(ResolutionReport {
        factor,
        conv_scale,
        accuracy_train_resolution: base,
        accuracy_shifted: acc,
        accuracy_shifted_unscaled: raw,
    })
}

fn save_checkpoint<T: Real>(net: &Ccnn<T>, out: &TrainOutputs, epoch: usize, path: &Path) -> Result<()> {
    let mut meta = match &out.meta {
        serde_json::Value::Object(m) => m.clone(),
        _ => serde_json::Map::new(),
    };
    meta.insert("epoch".into(), epoch.into());
    checkpoint::save(net, &serde_json::Value::Object(meta), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(epochs: usize, warmup: f64) -> TrainConfig {
        TrainConfig {
            epochs,
            warmup_epochs: warmup,
            lr_max: 0.01,
            ..Default::default()
        }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(210, 10.0);
        assert_eq!(lr_at(0, 0, 50, &c), 0.0);
        assert!((lr_at(10, 0, 50, &c) - 0.01).abs() < 1e-15);
        assert!(lr_at(209, 49, 50, &c) <= 1e-3 * 0.01);
        assert!((lr_at(5, 0, 50, &c) - 0.005).abs() < 1e-15);
    }

    #[test]
    fn schedule_is_continuous_at_junction() {
        let c = cfg(20, 3.0);
        let spe = 1_000_000;
        let before = lr_at(2, spe - 1, spe, &c);
        let at = lr_at(3, 0, spe, &c);
        assert!((at - before).abs() <= 1e-5 * c.lr_max);
        assert_eq!(at, c.lr_max);
    }

    #[test]
    fn warmup_clamps_for_short_runs() {
        let c = cfg(4, 10.0);
        assert_eq!(lr_at(2, 0, 10, &c), 0.01);
        assert!(lr_at(3, 9, 10, &c) <= 1e-5);
    }

    #[test]
    fn adamw_decay_only() {
        let c = TrainConfig::default();
        let mut th = [2.0f64, -4.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        adamw_update(&mut th, &[0.0, 0.0], &mut m, &mut v, 1, 0.01, 0.0, &c);
        assert_eq!(th, [2.0, -4.0]);
        adamw_update(&mut th, &[0.0, 0.0], &mut m, &mut v, 2, 0.01, 0.1, &c);
        assert_eq!(th, [2.0 * (1.0 - 0.001), -4.0 * (1.0 - 0.001)]);
    }
}
