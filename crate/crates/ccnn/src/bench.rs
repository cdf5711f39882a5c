//! Wall-clock comparison of the direct and FFT convolution paths.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::conv::{depthwise_conv, ConvMode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BENCH_HEADER: &str = "path,length,mean_ms,std_ms";

#[derive(Clone, Debug)]
pub struct BenchConfig {
    /// Sequence lengths (1D) or image sides (2D), ascending.
    pub lengths: Vec<usize>,
    pub dims: usize,
    pub channels: usize,
    pub warmup: usize,
    pub reps: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            lengths: vec![256, 1024, 2048, 4096, 16384],
            dims: 1,
            channels: 32,
            warmup: 2,
            reps: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub path: &'static str,
    pub length: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        format!("{},{},{:.4},{:.4}", self.path, self.length, self.mean_ms, self.std_ms)
    }
}

/// Time one channel-wise convolution with a kernel as large as the input.
/// 1D runs causal; 2D runs centered on `side x side` with an odd kernel.
pub fn time_path(use_fft: bool, length: usize, cfg: &BenchConfig) -> Result<BenchRow> {
    let mut rng = ChaCha8Rng::seed_from_u64(length as u64);
    let (x_shape, k_shape, mode) = match cfg.dims {
        1 => (vec![1, cfg.channels, length], vec![cfg.channels, length], ConvMode::Causal),
        2 => {
            let k = if length % 2 == 0 { length - 1 } else { length };
            (vec![1, cfg.channels, length, length], vec![cfg.channels, k, k], ConvMode::Centered)
        }
        d => return Err(Error::usage(format!("bench dims must be 1 or 2, got {d}"))),
    };
    let x = Tensor::<f32>::from_fn(&x_shape, |_| StandardNormal.sample(&mut rng));
    let k = Tensor::<f32>::from_fn(&k_shape, |_| StandardNormal.sample(&mut rng));
    for _ in 0..cfg.warmup {
        depthwise_conv(&x, &k, mode, use_fft)?;
    }
    let mut ms = Vec::with_capacity(cfg.reps);
    for _ in 0..cfg.reps {
        let t = Instant::now();
        std::hint::black_box(depthwise_conv(&x, &k, mode, use_fft)?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let n = ms.len() as f64;
    let mean = ms.iter().sum::<f64>() / n;
    let std = (ms.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    Ok(BenchRow {
        path: if use_fft { "fft" } else { "direct" },
        length,
        mean_ms: mean,
        std_ms: std,
    })
}

pub fn run(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.reps < 20 {
        return Err(Error::usage(format!("at least 20 repetitions required, got {}", cfg.reps)));
    }
    if cfg.lengths.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::usage("lengths must be sorted ascending"));
    }
    let mut rows = Vec::new();
    for use_fft in [false, true] {
        for &len in &cfg.lengths {
            rows.push(time_path(use_fft, len, cfg)?);
        }
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_schema() {
        let cfg = BenchConfig {
            lengths: vec![8, 16],
            reps: 20,
            warmup: 0,
            channels: 2,
            dims: 1,
        };
        let csv = to_csv(&run(&cfg).unwrap());
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], BENCH_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("direct,8,"));
        assert!(lines[4].starts_with("fft,16,"));
    }

    #[test]
    fn rejects_unsorted_and_few_reps() {
        let mut cfg = BenchConfig {
            lengths: vec![16, 8],
            ..Default::default()
        };
        assert!(run(&cfg).is_err());
        cfg.lengths = vec![8];
        cfg.reps = 5;
        assert!(run(&cfg).is_err());
    }
}
