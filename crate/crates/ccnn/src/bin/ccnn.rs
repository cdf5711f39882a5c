use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ccnn::bench::{self, BenchConfig};
use ccnn::checkpoint;
use ccnn::config::RunConfig;
use ccnn::data::{load_splits, Splits, Task};
use ccnn::model::{Ccnn, ForwardOptions};
use ccnn::train::{evaluate, resolution_test, train_loop, TrainOutputs};
use ccnn::verify::{self, Suite};
use ccnn::{Error, Precision, Real};

#[derive(Parser)]
#[command(name = "ccnn", version, about = "Continuous convolutional neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, checkpoints and the merged config.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Write the generated kernels of every block as CSV.
        #[arg(long)]
        dump_kernels: bool,
    },
    /// Evaluate a checkpoint on the test split of its task.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        dump_kernels: Option<PathBuf>,
    },
    /// Property suites on synthetic inputs (64-bit).
    Verify {
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Direct vs FFT channel-wise convolution timings as CSV.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [256, 1024, 2048, 4096, 16384])]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        dims: usize,
        #[arg(long, default_value_t = 32)]
        channels: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 2)]
        warmup: usize,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy of a checkpoint at its training resolution and at a
    /// resolution lowered by `factor`.
    ResolutionTest {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        factor: usize,
        #[arg(long)]
        data_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunFlags {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    precision: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    omega0: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
}

impl RunFlags {
    fn table(&self) -> toml::Table {
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Option<toml::Value>| {
            if let Some(v) = v {
                t.insert(k.into(), v);
            }
        };
        let int = |v: Option<u64>| v.map(|v| toml::Value::Integer(v as i64));
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| toml::Value::String(p.display().to_string()));
        put("preset", self.preset.clone().map(toml::Value::String));
        put("seed", int(self.seed));
        put("data_dir", path(&self.data_dir));
        put("out_dir", path(&self.out_dir));
        put("precision", int(self.precision.map(u64::from)));
        put("epochs", int(self.epochs.map(|v| v as u64)));
        put("lr", self.lr.map(toml::Value::Float));
        put("omega0", self.omega0.map(toml::Value::Float));
        put("dropout", self.dropout.map(toml::Value::Float));
        put("blocks", int(self.blocks.map(|v| v as u64)));
        put("channels", int(self.channels.map(|v| v as u64)));
        put("dim", int(self.dim.map(|v| v as u64)));
        t
    }
}

/// Exit code 2 for a missing dataset or bad usage, 1 for everything else.
fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::MissingPath(_) | Error::Usage(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn load_data(run: &RunConfig) -> ccnn::Result<Splits> {
    if run.task != Task::Longrange && run.data_dir.is_none() {
        return Err(Error::MissingPath(PathBuf::from("<data_dir>")));
    }
    load_splits(&run.data_config(), run.data_dir.as_deref())
}

fn write_kernels<T: Real>(net: &Ccnn<T>, spatial: &[usize], dir: &Path) -> ccnn::Result<()> {
    fs::create_dir_all(dir)?;
    for (i, csv) in net.kernel_dumps(spatial)?.iter().enumerate() {
        fs::write(dir.join(format!("kernels_block{i}.csv")), csv)?;
    }
    Ok(())
}

fn train<T: Real>(run: &RunConfig, dump_kernels: bool) -> ccnn::Result<()> {
    let dir = run.out_dir.clone();
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), run.echo()?)?;
    let splits = load_data(run)?;
    let mut net = Ccnn::<T>::build(run.model_config())?;
    let b = net.param_breakdown();
    log::info!(
        "{} blocks x {} channels: {} parameters (stem {}, blocks {}, generators {}, classifier {})",
        run.blocks,
        run.channels,
        b.total(),
        b.stem,
        b.blocks,
        b.generators,
        b.classifier
    );
    let out = TrainOutputs {
        dir: Some(dir.clone()),
        meta: serde_json::json!({ "run": run, "version": env!("CARGO_PKG_VERSION") }),
    };
    let report = train_loop(&mut net, &splits.train, &splits.val, &run.train_config(), &out)?;
    let (loss, acc) = evaluate(&report.best, &splits.test, run.batch_size, &ForwardOptions::eval())?;
    let summary = serde_json::json!({
        "best_epoch": report.best_epoch,
        "best_val_accuracy": report.best_val_accuracy,
        "test_loss": loss,
        "test_accuracy": acc,
        "parameters": b.total(),
    });
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary).expect("json"))?;
    println!("best val accuracy {:.4} (epoch {}), test accuracy {acc:.4}", report.best_val_accuracy, report.best_epoch);
    if dump_kernels {
        write_kernels(&net, &run.input_extent(), &dir)?;
    }
    Ok(())
}

/// Network and run configuration stored in a checkpoint written by `train`.
fn open_checkpoint(path: &Path, data_dir: &Option<PathBuf>) -> ccnn::Result<(checkpoint::Checkpoint, RunConfig)> {
    let ck = checkpoint::read(path)?;
    let mut run: RunConfig = ck
        .meta
        .get("run")
        .cloned()
        .ok_or_else(|| Error::Usage(format!("{} has no run configuration", path.display())))
        .and_then(|v| serde_json::from_value(v).map_err(|e| Error::Usage(format!("run configuration: {e}"))))?;
    if data_dir.is_some() {
        run.data_dir = data_dir.clone();
    }
    Ok((ck, run))
}

fn eval<T: Real>(ck: checkpoint::Checkpoint, run: &RunConfig, dump: &Option<PathBuf>) -> ccnn::Result<()> {
    let net = ck.into_model::<T>()?;
    let splits = load_data(run)?;
    let (loss, acc) = evaluate(&net, &splits.test, run.batch_size, &ForwardOptions::eval())?;
    println!("test loss {loss:.4} accuracy {acc:.4}");
    if let Some(dir) = dump {
        write_kernels(&net, &run.input_extent(), dir)?;
    }
    Ok(())
}

fn resolution<T: Real>(ck: checkpoint::Checkpoint, run: &RunConfig, factor: usize) -> ccnn::Result<()> {
    if run.task == Task::Longrange {
        return Err(Error::Usage("resolution tests need an image task".into()));
    }
    let shifted_factor = run.downsample * factor;
    if factor == 0 || 28 % shifted_factor != 0 {
        return Err(Error::Usage(format!(
            "28-pixel images at downsample {} are not divisible by factor {factor}",
            run.downsample
        )));
    }
    let net = ck.into_model::<T>()?;
    let base = load_data(run)?;
    let shifted = RunConfig {
        downsample: shifted_factor,
        ..run.clone()
    };
    let low = load_data(&shifted)?;
    let r = resolution_test(&net, &base.test, &low.test, factor, run.batch_size)?;
    println!("train resolution accuracy {:.4}", r.accuracy_train_resolution);
    println!("1/{factor} resolution accuracy {:.4} (scale {})", r.accuracy_shifted, r.conv_scale);
    println!("1/{factor} resolution accuracy without scale {:.4}", r.accuracy_shifted_unscaled);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { run, dump_kernels } => {
            RunConfig::resolve(run.config.as_deref(), &run.table()).and_then(|cfg| match cfg.precision()? {
                Precision::F32 => train::<f32>(&cfg, dump_kernels),
                Precision::F64 => train::<f64>(&cfg, dump_kernels),
            })
        }
        Command::Eval {
            checkpoint,
            data_dir,
            dump_kernels,
        } => open_checkpoint(&checkpoint, &data_dir).and_then(|(ck, run)| match ck.precision {
            Precision::F32 => eval::<f32>(ck, &run, &dump_kernels),
            Precision::F64 => eval::<f64>(ck, &run, &dump_kernels),
        }),
        Command::ResolutionTest {
            checkpoint,
            factor,
            data_dir,
        } => open_checkpoint(&checkpoint, &data_dir).and_then(|(ck, run)| match ck.precision {
            Precision::F32 => resolution::<f32>(ck, &run, factor),
            Precision::F64 => resolution::<f64>(ck, &run, factor),
        }),
        Command::Verify { suite } => {
            return match suite.parse::<Suite>().and_then(verify::run) {
                Ok(checks) => {
                    for c in &checks {
                        println!("{c}");
                    }
                    if checks.iter().all(|c| c.passed()) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            };
        }
        Command::Bench {
            lengths,
            dims,
            channels,
            reps,
            warmup,
            out,
        } => {
            let cfg = BenchConfig {
                lengths,
                dims,
                channels,
                warmup,
                reps,
            };
            bench::run(&cfg).and_then(|rows| {
                let csv = bench::to_csv(&rows);
                print!("{csv}");
                if let Some(p) = out {
                    fs::write(p, csv)?;
                }
                Ok(())
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
