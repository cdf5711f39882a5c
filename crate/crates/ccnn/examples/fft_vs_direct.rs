//! FFT and direct channel-wise convolution: agreement and wall time.
//!
//! ```text
//! cargo run --release --example fft_vs_direct
//! ```

use ccnn::bench::{self, BenchConfig};
use ccnn::conv::{conv1d_direct, conv1d_fft, conv2d_direct, conv2d_fft};
use ccnn::Tensor;

fn wave(shape: &[usize], f: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |i| (f * i as f64).sin() + 0.3 * (0.37 * f * i as f64).cos())
}

fn main() -> ccnn::Result<()> {
    for len in [16, 257, 1024, 4096] {
        let (x, k) = (wave(&[1, 2, len], 0.11), wave(&[3, 2, len], 0.07));
        let d = conv1d_fft(&x, &k, true)?.max_abs_diff(&conv1d_direct(&x, &k, true)?)?;
        println!("1D length {len:>5}: max |fft - direct| = {d:.2e}");
    }
    let (x, k) = (wave(&[1, 1, 32, 32], 0.13), wave(&[1, 1, 31, 31], 0.05));
    let d = conv2d_fft(&x, &k)?.max_abs_diff(&conv2d_direct(&x, &k)?)?;
    println!("2D 32x32 with a 31x31 kernel: max |fft - direct| = {d:.2e}");

    let cfg = BenchConfig {
        lengths: vec![256, 1024, 4096],
        reps: 20,
        ..Default::default()
    };
    print!("\n{}", bench::to_csv(&bench::run(&cfg)?));
    Ok(())
}
