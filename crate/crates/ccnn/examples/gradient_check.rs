//! Backpropagated gradients of a small network against central differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use ccnn::model::{Ccnn, CcnnConfig};
use ccnn::verify::model_gradient_errors;
use ccnn::Tensor;

fn main() -> ccnn::Result<()> {
    for extent in [vec![16], vec![9, 9]] {
        let mut cfg = CcnnConfig::new(1, 4, &extent, 3);
        cfg.seed = 3;
        let mut shape = vec![4, 1];
        shape.extend(&extent);
        let x = Tensor::from_fn(&shape, |i| ((i * 7919) % 13) as f64 / 6.0 - 1.0);
        println!("input {shape:?}");
        for (name, err) in model_gradient_errors(Ccnn::<f64>::build(cfg)?, &x, &[0, 1, 2, 1])? {
            println!("  {name:<36} {err:.2e}");
        }
    }
    Ok(())
}
