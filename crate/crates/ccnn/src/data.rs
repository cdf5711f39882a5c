//! Datasets: MNIST from IDX files, sequential and permuted flattening,
//! average-pool downsampling, and a synthetic long-range XOR task.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    /// Samples per unit length along each spatial axis.
    pub resolution: Vec<f64>,
    pub split: String,
    pub n_classes: usize,
}

/// Inputs `[N, C, s..]` stored in single precision, with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    inputs: Tensor<f32>,
    labels: Vec<usize>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, labels: Vec<usize>, meta: DatasetMeta) -> Result<Self> {
        if inputs.rank() < 3 || inputs.shape()[0] != labels.len() {
            return Err(Error::dim("dataset", inputs.shape(), &[labels.len()]));
        }
        if meta.resolution.len() != inputs.rank() - 2 {
            return Err(Error::usage("resolution needs one entry per spatial axis"));
        }
        if !inputs.all_finite() {
            return Err(Error::usage("dataset inputs must be finite"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= meta.n_classes) {
            return Err(Error::usage(format!("label {l} out of range for {} classes", meta.n_classes)));
        }
        Ok(Dataset { inputs, labels, meta })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor<f32> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn channels(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn spatial(&self) -> &[usize] {
        &self.inputs.shape()[2..]
    }

    fn sample_len(&self) -> usize {
        self.inputs.len() / self.len().max(1)
    }

    /// Inputs and labels of the listed samples, converted to `T`.
    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        let n = self.sample_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            if i >= self.len() {
                return Err(Error::usage(format!("sample {i} out of range for {} samples", self.len())));
            }
            data.extend(self.inputs.data()[i * n..(i + 1) * n].iter().map(|&v| T::lit(v as f64)));
            labels.push(self.labels[i]);
        }
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = idx.len();
        Ok((Tensor::new(shape, data)?, labels))
    }

    pub fn subset(&self, idx: &[usize], split: &str) -> Result<Self> {
        let (inputs, labels) = self.batch::<f32>(idx)?;
        let meta = DatasetMeta {
            split: split.into(),
            ..self.meta.clone()
        };
        Dataset::new(inputs, labels, meta)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.meta.n_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Mean and standard deviation over every input value.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.inputs.len() as f64;
        let mean = self.inputs.data().iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.inputs.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// `(x - mean) / std` on every value.
    pub fn standardize(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0) {
            return Err(Error::usage("standard deviation must be positive"));
        }
        self.inputs = self.inputs.map(|v| ((v as f64 - mean) / std) as f32);
        Ok(())
    }
}

fn be_u32(bytes: &[u8], at: usize, field: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(field, "file truncated"))
}

/// Parse an IDX file of unsigned bytes: returns `(extents, payload)`.
fn parse_idx<'a>(bytes: &'a [u8], magic: u32, what: &str) -> Result<(Vec<usize>, &'a [u8])> {
    let m = be_u32(bytes, 0, &format!("{what} magic"))?;
    if m != magic {
        return Err(Error::format(
            format!("{what} magic"),
            format!("expected {magic:#010x}, found {m:#010x}"),
        ));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|i| be_u32(bytes, 4 + 4 * i, &format!("{what} dimension {i}")).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * rank;
    let count: usize = dims.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() != count {
        return Err(Error::format(
            format!("{what} payload"),
            format!("header declares {count} bytes, file has {}", payload.len()),
        ));
    }
    Ok((dims, payload))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

/// Load an MNIST image/label pair as `[N, 1, 28, 28]` with values in `[0, 1]`.
/// Standardization uses training-split statistics, see [`Dataset::standardize`].
pub fn load_mnist_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let ib = read_file(images)?;
    let lb = read_file(labels)?;
    let (idims, pixels) = parse_idx(&ib, IDX_IMAGES_MAGIC, "images")?;
    let (ldims, lab) = parse_idx(&lb, IDX_LABELS_MAGIC, "labels")?;
    if idims[0] != ldims[0] {
        return Err(Error::format(
            "count",
            format!("{} images but {} labels", idims[0], ldims[0]),
        ));
    }
    if let Some(&bad) = lab.iter().find(|&&l| l > 9) {
        return Err(Error::format("labels", format!("label {bad} outside 0..=9")));
    }
    let (n, h, w) = (idims[0], idims[1], idims[2]);
    let inputs = Tensor::new(vec![n, 1, h, w], pixels.iter().map(|&p| p as f32 / 255.0).collect())?;
    let name = images.file_name().and_then(|s| s.to_str()).unwrap_or("mnist");
    Dataset::new(
        inputs,
        lab.iter().map(|&l| l as usize).collect(),
        DatasetMeta {
            name: "mnist".into(),
            resolution: vec![h as f64, w as f64],
            split: if name.starts_with("t10k") { "test" } else { "train" }.into(),
            n_classes: 10,
        },
    )
}

pub fn write_idx_images(path: &Path, n: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != n * rows * cols {
        return Err(Error::dim("write_idx_images", &[pixels.len()], &[n, rows, cols]));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

/// A fixed random permutation of `0..len`.
pub fn random_permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..len).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

/// Flatten `[N, C, H, W]` to `[N, C, H*W]` in row-major order. With a
/// permutation, output position `i` takes input position `perm[i]`.
pub fn to_sequence(d: &Dataset, permutation: Option<&[usize]>) -> Result<Dataset> {
    let s = d.inputs.shape();
    if s.len() != 4 {
        return Err(Error::usage(format!("to_sequence needs [N, C, H, W], got {s:?}")));
    }
    let (n, c, len) = (s[0], s[1], s[2] * s[3]);
    if let Some(p) = permutation {
        let mut seen = vec![false; len];
        if p.len() != len || p.iter().any(|&i| i >= len || std::mem::replace(&mut seen[i], true)) {
            return Err(Error::usage(format!("permutation is not a bijection on 0..{len}")));
        }
    }
    let data = match permutation {
        None => d.inputs.data().to_vec(),
        Some(p) => {
            let mut out = Vec::with_capacity(d.inputs.len());
            for row in d.inputs.data().chunks(len) {
                out.extend(p.iter().map(|&i| row[i]));
            }
            out
        }
    };
    let meta = DatasetMeta {
        name: format!("{}-{}", d.meta.name, if permutation.is_some() { "perm" } else { "seq" }),
        resolution: vec![d.meta.resolution.iter().product()],
        ..d.meta.clone()
    };
    Dataset::new(Tensor::new(vec![n, c, len], data)?, d.labels.clone(), meta)
}

/// Inverse of [`to_sequence`] without a permutation.
pub fn from_sequence(d: &Dataset, h: usize, w: usize) -> Result<Dataset> {
    let s = d.inputs.shape();
    if s.len() != 3 || s[2] != h * w {
        return Err(Error::dim("from_sequence", s, &[h, w]));
    }
    let side = (d.meta.resolution[0] / (h * w) as f64).sqrt();
    let meta = DatasetMeta {
        resolution: vec![h as f64 * side, w as f64 * side],
        ..d.meta.clone()
    };
    Dataset::new(d.inputs.clone().reshape(&[s[0], s[1], h, w])?, d.labels.clone(), meta)
}

/// Average-pool every spatial axis by `factor`.
pub fn downsample(d: &Dataset, factor: usize) -> Result<Dataset> {
    if factor == 0 {
        return Err(Error::usage("downsample factor must be >= 1"));
    }
    let spatial = d.spatial().to_vec();
    if let Some(bad) = spatial.iter().find(|&&n| n % factor != 0) {
        return Err(Error::usage(format!("extent {bad} is not divisible by {factor}")));
    }
    if factor == 1 {
        return Ok(d.clone());
    }
    let (n, c) = (d.len(), d.channels());
    let (h, w) = match spatial[..] {
        [l] => (1, l),
        [h, w] => (h, w),
        _ => return Err(Error::usage("downsample supports 1 or 2 spatial axes")),
    };
    let fh = if spatial.len() == 1 { 1 } else { factor };
    let (oh, ow) = (h / fh, w / factor);
    let norm = (fh * factor) as f32;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in d.inputs.data().chunks(h * w) {
        for r in 0..oh {
            for q in 0..ow {
                let mut s = 0.0f32;
                for dr in 0..fh {
                    for dq in 0..factor {
                        s += plane[(r * fh + dr) * w + q * factor + dq];
                    }
                }
                out.push(s / norm);
            }
        }
    }
    let mut shape = vec![n, c];
    if spatial.len() == 2 {
        shape.push(oh);
    }
    shape.push(ow);
    let meta = DatasetMeta {
        resolution: d.meta.resolution.iter().map(|r| r / factor as f64).collect(),
        ..d.meta.clone()
    };
    Dataset::new(Tensor::new(shape, out)?, d.labels.clone(), meta)
}

/// Noise amplitude of the filler positions in [`synthetic_longrange`].
pub const LONGRANGE_NOISE: f32 = 0.1;

/// Binary sequences `[n, 1, length]`: bits `a` and `b` are written as `+-1`
/// at positions 0 and `length - 1`, every other position is uniform noise in
/// `+-LONGRANGE_NOISE`, and the label is `a XOR b`.
pub fn synthetic_longrange(n: usize, length: usize, seed: u64) -> Result<Dataset> {
    if length < 8 {
        return Err(Error::usage(format!("length must be >= 8, got {length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * length);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let (a, b): (bool, bool) = (rng.random(), rng.random());
        let start = data.len();
        data.extend((0..length).map(|_| rng.random_range(-LONGRANGE_NOISE..=LONGRANGE_NOISE)));
        data[start] = if a { 1.0 } else { -1.0 };
        data[start + length - 1] = if b { 1.0 } else { -1.0 };
        labels.push(xor_label(a, b));
    }
    Dataset::new(
        Tensor::new(vec![n, 1, length], data)?,
        labels,
        DatasetMeta {
            name: "longrange-xor".into(),
            resolution: vec![length as f64],
            split: "synthetic".into(),
            n_classes: 2,
        },
    )
}

pub fn xor_label(a: bool, b: bool) -> usize {
    (a ^ b) as usize
}

/// How image data is presented to the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Row-major pixel sequences.
    Smnist,
    /// Pixel sequences under a fixed permutation.
    Pmnist,
    /// 2D images.
    Mnist2d,
    /// [`synthetic_longrange`].
    Longrange,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smnist" => Ok(Task::Smnist),
            "pmnist" => Ok(Task::Pmnist),
            "mnist2d" => Ok(Task::Mnist2d),
            "longrange" => Ok(Task::Longrange),
            _ => Err(Error::usage(format!(
                "unknown task `{s}` (expected smnist, pmnist, mnist2d or longrange)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub task: Task,
    /// 2000/500/1000 samples; otherwise 55k/5k/10k.
    pub desk: bool,
    /// Average-pool factor applied to MNIST images before flattening.
    pub downsample: usize,
    pub permutation_seed: u64,
    /// Shuffle seed of the train/validation split.
    pub split_seed: u64,
    /// Overrides the training split size.
    pub n_train: Option<usize>,
    /// Sequence length of the long-range task.
    pub length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            task: Task::Smnist,
            desk: true,
            downsample: 2,
            permutation_seed: 1234,
            split_seed: 0,
            n_train: None,
            length: 256,
        }
    }
}

pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Build train/validation/test sets for `cfg.task`. MNIST tasks read the
/// four standard IDX files from `data_dir`.
pub fn load_splits(cfg: &DataConfig, data_dir: Option<&Path>) -> Result<Splits> {
    let (n_train, n_val, n_test) = if cfg.desk { (2000, 500, 1000) } else { (55_000, 5_000, 10_000) };
    let n_train = cfg.n_train.unwrap_or(n_train);
    if cfg.task == Task::Longrange {
        return Ok(Splits {
            train: synthetic_longrange(n_train, cfg.length, cfg.split_seed)?,
            val: synthetic_longrange(n_val, cfg.length, cfg.split_seed + 1)?,
            test: synthetic_longrange(n_test, cfg.length, cfg.split_seed + 2)?,
        });
    }
    let dir = data_dir.ok_or_else(|| Error::usage("MNIST tasks need --data-dir"))?;
    let path = |i: usize| dir.join(MNIST_FILES[i]);
    let full = load_mnist_idx(&path(0), &path(1))?;
    let test_full = load_mnist_idx(&path(2), &path(3))?;
    if full.len() < n_train + n_val || test_full.len() < n_test {
        return Err(Error::usage(format!(
            "need {} training and {n_test} test images, found {} and {}",
            n_train + n_val,
            full.len(),
            test_full.len()
        )));
    }
    let order = random_permutation(full.len(), cfg.split_seed);
    let mut train = full.subset(&order[..n_train], "train")?;
    let mut val = full.subset(&order[n_train..n_train + n_val], "val")?;
    let idx: Vec<usize> = (0..n_test).collect();
    let mut test = test_full.subset(&idx, "test")?;
    let (mean, std) = train.moments();
    for d in [&mut train, &mut val, &mut test] {
        d.standardize(mean, std)?;
        *d = downsample(d, cfg.downsample)?;
    }
    if cfg.task != Task::Mnist2d {
        let spatial = train.spatial();
        let perm = (cfg.task == Task::Pmnist).then(|| random_permutation(spatial[0] * spatial[1], cfg.permutation_seed));
        for d in [&mut train, &mut val, &mut test] {
            *d = to_sequence(d, perm.as_deref())?;
        }
    }
    Ok(Splits { train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xor_truth_table() {
        assert_eq!(xor_label(true, true), 0);
        assert_eq!(xor_label(true, false), 1);
        assert_eq!(xor_label(false, true), 1);
        assert_eq!(xor_label(false, false), 0);
    }

    #[test]
    fn longrange_tokens_and_balance() {
        let d = synthetic_longrange(2000, 64, 3).unwrap();
        let c = d.class_counts();
        assert!((c[0] as f64 / 2000.0 - 0.5).abs() <= 0.05, "{c:?}");
        for (row, &l) in d.inputs().data().chunks(64).zip(d.labels()) {
            assert_eq!(l, xor_label(row[0] > 0.0, row[63] > 0.0));
            assert!(row[1..63].iter().all(|v| v.abs() <= LONGRANGE_NOISE));
        }
        assert!(synthetic_longrange(4, 7, 0).is_err());
    }

    #[test]
    fn downsample_2d_block_means() {
        let x = Tensor::from_fn(&[1, 1, 4, 4], |i| i as f32);
        let meta = DatasetMeta {
            name: "t".into(),
            resolution: vec![4.0, 4.0],
            split: "train".into(),
            n_classes: 1,
        };
        let d = Dataset::new(x, vec![0], meta).unwrap();
        let y = downsample(&d, 2).unwrap();
        assert_eq!(y.inputs().data(), &[2.5, 4.5, 10.5, 12.5]);
        assert_eq!(y.meta.resolution, vec![2.0, 2.0]);
        assert!(matches!(downsample(&d, 3), Err(Error::Usage(_))));
    }
}
