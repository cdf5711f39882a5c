//! Run configuration: named presets, a flat TOML file and flag overrides,
//! merged in that order.
//!
//! Every key of the file is a field of [`RunConfig`]:
//!
//! | key | meaning |
//! |---|---|
//! | `preset` | starting point, see [`PRESETS`] |
//! | `seed` | model initialization and batch shuffling |
//! | `precision` | `32` or `64` |
//! | `data_dir`, `out_dir` | MNIST IDX directory, artifact directory |
//! | `task` | `smnist`, `pmnist`, `mnist2d` or `longrange` |
//! | `dim` | 1 or 2; switches between sequential and 2D MNIST |
//! | `desk` | 2000/500/1000 samples instead of 55k/5k/10k |
//! | `downsample` | average-pool factor for MNIST images |
//! | `permutation_seed`, `split_seed`, `length` | data construction |
//! | `blocks`, `channels`, `kg_hidden`, `omega0`, `dropout` | network |
//! | `norm` (`batch`/`layer`), `filter` (`gabor`/`sine`) | network |
//! | `kernel_points` | fixed kernel extent per axis (absent: full size) |
//! | `corrected_init` | generator last-layer rescaling |
//! | `epochs`, `lr`, `weight_decay`, `warmup_epochs`, `batch_size` | optimizer |

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataConfig, Task};
use crate::error::{Error, Result};
use crate::kernelgen::FilterKind;
use crate::model::{CcnnConfig, NormKind};
use crate::tensor::Precision;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub seed: u64,
    pub precision: u32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub task: Task,
    pub dim: usize,
    pub desk: bool,
    pub downsample: usize,
    pub permutation_seed: u64,
    pub split_seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_train: Option<usize>,
    pub length: usize,
    pub blocks: usize,
    pub channels: usize,
    pub kg_hidden: usize,
    pub omega0: f64,
    pub dropout: f64,
    pub norm: NormKind,
    pub filter: FilterKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub kernel_points: Option<Vec<usize>>,
    pub corrected_init: bool,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_epochs: f64,
    pub batch_size: usize,
}

pub const PRESETS: [&str; 9] = [
    "smnist-desk",
    "pmnist-desk",
    "mnist2d-desk",
    "longrange-desk",
    "smnist",
    "pmnist",
    "ccnn-4-110",
    "ccnn-6-380",
    "toy",
];

fn desk(task: Task) -> RunConfig {
    RunConfig {
        preset: String::new(),
        seed: 0,
        precision: 32,
        data_dir: None,
        out_dir: PathBuf::from("runs/latest"),
        task,
        dim: if task == Task::Mnist2d { 2 } else { 1 },
        desk: true,
        downsample: 2,
        permutation_seed: 1234,
        split_seed: 0,
        n_train: None,
        length: 256,
        blocks: 2,
        channels: 16,
        kg_hidden: 32,
        omega0: 30.0,
        dropout: 0.0,
        norm: NormKind::Batch,
        filter: FilterKind::Gabor,
        kernel_points: None,
        corrected_init: true,
        epochs: 10,
        lr: 0.01,
        weight_decay: 0.0,
        warmup_epochs: 1.0,
        batch_size: 50,
    }
}

/// Full-size runs with the best hyperparameters reported for each task.
fn full(task: Task, blocks: usize, channels: usize, kg_hidden: usize, row: (f64, f64, f64, f64)) -> RunConfig {
    let (omega0, dropout, lr, weight_decay) = row;
    RunConfig {
        desk: false,
        downsample: 1,
        blocks,
        channels,
        kg_hidden,
        omega0,
        dropout,
        lr,
        weight_decay,
        epochs: 210,
        warmup_epochs: 10.0,
        batch_size: 100,
        ..desk(task)
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = match name {
            "smnist-desk" => desk(Task::Smnist),
            "pmnist-desk" => desk(Task::Pmnist),
            "mnist2d-desk" => desk(Task::Mnist2d),
            "longrange-desk" => RunConfig {
                n_train: Some(10_000),
                ..desk(Task::Longrange)
            },
            "smnist" | "ccnn-4-110" => full(Task::Smnist, 4, 110, 32, (2976.49, 0.1, 0.01, 1e-6)),
            "pmnist" => full(Task::Pmnist, 4, 110, 32, (2985.63, 0.2, 0.02, 0.0)),
            "ccnn-6-380" => full(Task::Smnist, 6, 380, 64, (2976.49, 0.1, 0.01, 0.0)),
            "toy" => RunConfig {
                blocks: 1,
                channels: 4,
                epochs: 2,
                ..desk(Task::Longrange)
            },
            _ => {
                return Err(Error::usage(format!(
                    "unknown preset `{name}`; available: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        c.preset = name.into();
        Ok(c)
    }

    /// Preset, then file, then flag overrides. The preset comes from the
    /// flags if given there, else from the file, else `smnist-desk`.
    pub fn resolve(file: Option<&Path>, flags: &toml::Table) -> Result<Self> {
        let file_table = match file {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::MissingPath(p.to_path_buf()));
                }
                fs::read_to_string(p)?
                    .parse::<toml::Table>()
                    .map_err(|e| Error::format(p.display().to_string(), e.to_string()))?
            }
            None => toml::Table::new(),
        };
        let name = [flags, &file_table]
            .iter()
            .find_map(|t| t.get("preset").and_then(|v| v.as_str()).map(String::from))
            .unwrap_or_else(|| "smnist-desk".into());
        let base = Self::preset(&name)?;
        base.overlay(&file_table)?.overlay(flags)
    }

    /// Replace the fields named in `table`.
    pub fn overlay(&self, table: &toml::Table) -> Result<Self> {
        let mut merged = toml::Table::try_from(self).map_err(|e| Error::format("config", e.to_string()))?;
        let mut dim = None;
        for (k, v) in table {
            if k == "dim" {
                dim = Some(v.as_integer().ok_or_else(|| Error::format("dim", "expected an integer"))?);
            }
            merged.insert(k.clone(), v.clone());
        }
        let mut c: RunConfig = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::format("config", e.message().to_string()))?;
        match (dim, c.task) {
            (Some(2), Task::Smnist | Task::Pmnist) => c.task = Task::Mnist2d,
            (Some(1), Task::Mnist2d) => c.task = Task::Smnist,
            (Some(2), Task::Longrange) => return Err(Error::usage("the long-range task is 1D only")),
            (Some(d), _) if d != 1 && d != 2 => return Err(Error::usage(format!("dim must be 1 or 2, got {d}"))),
            _ => {}
        }
        c.dim = if c.task == Task::Mnist2d { 2 } else { 1 };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.precision()?;
        self.model_config().validate()?;
        self.train_config().validate()?;
        if self.downsample == 0 || 28 % self.downsample != 0 {
            return Err(Error::usage(format!("downsample must divide 28, got {}", self.downsample)));
        }
        Ok(())
    }

    pub fn precision(&self) -> Result<Precision> {
        Precision::from_bits(self.precision)
    }

    /// Spatial extent of the inputs this configuration produces.
    pub fn input_extent(&self) -> Vec<usize> {
        let side = 28 / self.downsample.max(1);
        match self.task {
            Task::Longrange => vec![self.length],
            Task::Mnist2d => vec![side, side],
            Task::Smnist | Task::Pmnist => vec![side * side],
        }
    }

    pub fn n_classes(&self) -> usize {
        if self.task == Task::Longrange {
            2
        } else {
            10
        }
    }

    pub fn model_config(&self) -> CcnnConfig {
        CcnnConfig {
            dropout: self.dropout,
            kg_hidden: self.kg_hidden,
            omega0: self.omega0,
            seed: self.seed,
            norm: self.norm,
            filter: self.filter,
            kernel_points: self.kernel_points.clone(),
            corrected_init: self.corrected_init,
            ..CcnnConfig::new(self.blocks, self.channels, &self.input_extent(), self.n_classes())
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_max: self.lr,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            ..Default::default()
        }
    }

    pub fn data_config(&self) -> DataConfig {
        DataConfig {
            task: self.task,
            desk: self.desk,
            downsample: self.downsample,
            permutation_seed: self.permutation_seed,
            split_seed: self.split_seed,
            n_train: self.n_train,
            length: self.length,
        }
    }

    /// The merged configuration as TOML, headed by the crate version.
    pub fn echo(&self) -> Result<String> {
        let body = toml::to_string(self).map_err(|e| Error::format("config", e.to_string()))?;
        Ok(format!("# ccnn {}\n{body}", env!("CARGO_PKG_VERSION")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_is_valid() {
        for p in PRESETS {
            let c = RunConfig::preset(p).unwrap();
            c.validate().unwrap();
        }
        assert!(RunConfig::preset("nope").is_err());
    }

    #[test]
    fn ccnn_4_110_preset() {
        let c = RunConfig::preset("ccnn-4-110").unwrap().model_config();
        assert_eq!((c.n_blocks, c.channels, c.kg_hidden), (4, 110, 32));
        let c = RunConfig::preset("ccnn-6-380").unwrap().model_config();
        assert_eq!((c.n_blocks, c.channels, c.kg_hidden), (6, 380, 64));
    }

    #[test]
    fn flags_override_file_override_preset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "preset = \"pmnist-desk\"\nepochs = 3\nlr = 0.5\n").unwrap();
        let mut flags = toml::Table::new();
        flags.insert("lr".into(), toml::Value::Float(0.25));
        flags.insert("dim".into(), toml::Value::Integer(2));
        let c = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!((c.epochs, c.lr, c.task, c.dim), (3, 0.25, Task::Mnist2d, 2));
        let echoed: RunConfig = toml::from_str(&c.echo().unwrap()).unwrap();
        assert_eq!(echoed, c);
    }

    #[test]
    fn rejects_unknown_keys() {
        let mut flags = toml::Table::new();
        flags.insert("learning_rate".into(), toml::Value::Float(0.1));
        assert!(RunConfig::resolve(None, &flags).is_err());
    }
}
