//! Save a network, load it back and compare logits.
//!
//! ```text
//! cargo run --release --example checkpoint
//! ```

use ccnn::checkpoint;
use ccnn::model::{Ccnn, CcnnConfig};
use ccnn::Tensor;

fn main() -> ccnn::Result<()> {
    let net = Ccnn::<f32>::build(CcnnConfig::new(2, 8, &[64], 2))?;
    let path = std::env::temp_dir().join("ccnn-example.ckpt");
    checkpoint::save(&net, &serde_json::json!({"note": "example"}), &path)?;
    let ck = checkpoint::read(&path)?;
    println!("{} bytes, precision {:?}, meta {}", std::fs::metadata(&path)?.len(), ck.precision, ck.meta);
    let back = ck.into_model::<f32>()?;
    let x = Tensor::<f32>::from_fn(&[3, 1, 64], |i| (i as f32 * 0.3).sin());
    let d = net.logits(&x)?.max_abs_diff(&back.logits(&x)?)?;
    println!("max |logit difference| after reload: {d}");
    std::fs::remove_file(&path)?;
    Ok(())
}
