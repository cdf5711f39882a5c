//! Full-length versus 3-point kernels on the synthetic long-range XOR task.
//!
//! The label is the XOR of two tokens at the first and last positions of a
//! 256-step sequence, so only a receptive field spanning the whole sequence
//! can solve it. Uses the `longrange-desk` preset (10k training sequences).
//!
//! ```text
//! cargo run --release --example long_range_xor [-- EPOCHS]
//! ```

use ccnn::config::RunConfig;
use ccnn::data::load_splits;
use ccnn::model::{Ccnn, ForwardOptions};
use ccnn::train::{evaluate, train_loop, TrainOutputs};

fn main() -> ccnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut run = RunConfig::preset("longrange-desk")?;
    if let Some(e) = std::env::args().nth(1).and_then(|a| a.parse().ok()) {
        run.epochs = e;
    }
    let splits = load_splits(&run.data_config(), None)?;
    for kernel_points in [None, Some(vec![3])] {
        let mut cfg = run.model_config();
        cfg.kernel_points = kernel_points.clone();
        let mut net = Ccnn::<f32>::build(cfg)?;
        let start = std::time::Instant::now();
        let report = train_loop(&mut net, &splits.train, &splits.val, &run.train_config(), &TrainOutputs::default())?;
        let (_, acc) = evaluate(&report.best, &splits.test, 250, &ForwardOptions::eval())?;
        println!(
            "kernel {:>4}: test accuracy {acc:.3} ({:.1}s)",
            kernel_points.map_or("full".to_string(), |k| format!("{}", k[0])),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
