//! Kernel variance and logit scale at initialization, with and without the
//! last-layer rescaling of the kernel generators.
//!
//! ```text
//! cargo run --release --example init_variance
//! ```

use ccnn::kernelgen::{CoordinateGrid, GeneratorConfig, KernelGenerator};
use ccnn::model::{Ccnn, CcnnConfig};
use ccnn::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn variance(t: &Tensor<f64>) -> f64 {
    let n = t.len() as f64;
    let mean = t.sum() / n;
    t.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn main() -> ccnn::Result<()> {
    let (channels, points) = (110, 784);
    let grid = CoordinateGrid::<f64>::regular(1, &[points], true)?;
    let target = 1.0 / (channels * points) as f64;
    println!("seed  var(raw)  var(rescaled)/target");
    for seed in 0..5 {
        let mut g = KernelGenerator::<f64>::new(GeneratorConfig::new(1, 32, channels, 30.0), seed)?;
        let raw = variance(&g.generate(&grid)?);
        g.rescale_last_layer(1.0, channels, points)?;
        let scaled = variance(&g.generate(&grid)?);
        println!("{seed:>4}  {raw:>8.4}  {:>8.4}", scaled / target);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::<f64>::from_fn(&[8, 1, 784], |_| StandardNormal.sample(&mut rng));
    println!("\nCCNN-4-110 logits on a standard normal batch");
    for corrected in [true, false] {
        let mut cfg = CcnnConfig::ccnn_4_110(&[784], 10);
        cfg.corrected_init = corrected;
        let net = Ccnn::<f64>::build(cfg)?;
        let logits = net.logits(&x)?;
        let v = variance(&logits).sqrt();
        println!("corrected={corrected:<5}  std={v:.3e}  max|logit|={:.3e}", logits.max_abs());
    }
    Ok(())
}
