//! CCNN-2-16 on desk-scale sequential MNIST (14x14 images flattened to 196
//! steps, 2000 training images, 10 epochs).
//!
//! Needs the four IDX files of MNIST in a directory:
//!
//! ```text
//! cargo run --release --example smnist_desk -- /path/to/mnist
//! ```

use std::path::PathBuf;

use ccnn::autodiff::Parameterized;
use ccnn::config::RunConfig;
use ccnn::data::load_splits;
use ccnn::model::{Ccnn, ForwardOptions};
use ccnn::train::{evaluate, train_loop, TrainOutputs};

fn main() -> ccnn::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let dir = std::env::args()
        .nth(1)
        .or_else(|| std::env::var("CCNN_MNIST_DIR").ok())
        .map(PathBuf::from)
        .ok_or_else(|| ccnn::Error::Usage("pass the MNIST directory".into()))?;
    let run = RunConfig::preset("smnist-desk")?;
    let splits = load_splits(&run.data_config(), Some(&dir))?;
    let mut net = Ccnn::<f32>::build(run.model_config())?;
    println!("{} parameters", net.param_count());
    let report = train_loop(&mut net, &splits.train, &splits.val, &run.train_config(), &TrainOutputs::default())?;
    let (_, test) = evaluate(&report.best, &splits.test, 250, &ForwardOptions::eval())?;
    println!("best validation accuracy {:.4}, test accuracy {test:.4}", report.best_val_accuracy);
    Ok(())
}
