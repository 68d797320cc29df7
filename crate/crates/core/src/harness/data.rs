//! Datasets: CIFAR-10 binary batches, Gaussian-blob stand-ins, augmentation
//! and per-channel standardization.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::tensor::{SeededRng, Tensor};

pub const CIFAR_RECORD: usize = 3073;
const CIFAR_PIXELS: usize = 3072;
pub const AUGMENT_PAD: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImageSet {
    /// `[n, c, h, w]`; `None` for an empty set.
    pub images: Option<Tensor>,
    pub labels: Vec<usize>,
    pub image_shape: [usize; 3],
}

impl LabeledImageSet {
    pub fn new(images: Tensor, labels: Vec<usize>) -> Result<Self> {
        let (n, c, h, w) = images.dims4()?;
        if n != labels.len() {
            return Err(Error::dim(format!("{n} images with {} labels", labels.len())));
        }
        Ok(Self {
            images: Some(images),
            labels,
            image_shape: [c, h, w],
        })
    }

    pub fn empty(image_shape: [usize; 3]) -> Self {
        Self {
            images: None,
            labels: Vec::new(),
            image_shape,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> Result<Tensor> {
        let images = self.images.as_ref().ok_or_else(|| Error::Size("empty set".into()))?;
        let [c, h, w] = self.image_shape;
        images.row(i)?.into_reshaped(&[c, h, w])
    }

    /// Minibatch of the given example indices.
    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let images = self.images.as_ref().ok_or_else(|| Error::Size("empty set".into()))?;
        let inputs = images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Batch::new(inputs, labels)
    }

    /// The examples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Ok(Self::empty(self.image_shape));
        }
        let b = self.batch(indices)?;
        Self::new(b.inputs, b.labels)
    }

    pub fn concat(sets: &[LabeledImageSet]) -> Result<Self> {
        let shape = sets.first().ok_or_else(|| Error::Size("no sets".into()))?.image_shape;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for s in sets {
            if s.image_shape != shape {
                return Err(Error::dim("image shapes differ"));
            }
            if let Some(t) = &s.images {
                data.extend_from_slice(t.data());
            }
            labels.extend_from_slice(&s.labels);
        }
        if labels.is_empty() {
            return Ok(Self::empty(shape));
        }
        let [c, h, w] = shape;
        Self::new(Tensor::new(&[labels.len(), c, h, w], data)?, labels)
    }
}

/// Decodes CIFAR-10 binary records: one label byte then 3072 channel-major
/// pixel bytes.
pub fn parse_cifar10_bytes(bytes: &[u8]) -> Result<LabeledImageSet> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "length {} is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    if n == 0 {
        return Ok(LabeledImageSet::empty([3, 32, 32]));
    }
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * CIFAR_PIXELS);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format(format!("record {i} has label byte {}", rec[0])));
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&p| p as f64));
    }
    LabeledImageSet::new(Tensor::new(&[n, 3, 32, 32], data)?, labels)
}

pub fn parse_cifar10_bin(path: &Path) -> Result<LabeledImageSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar10_bytes(&bytes)
}

/// Training batches `data_batch_{1..5}.bin` and `test_batch.bin` from a
/// CIFAR-10 binary directory.
pub fn load_cifar10_dir(dir: &Path) -> Result<(LabeledImageSet, LabeledImageSet)> {
    let train: Vec<LabeledImageSet> = (1..=5)
        .map(|i| parse_cifar10_bin(&dir.join(format!("data_batch_{i}.bin"))))
        .collect::<Result<_>>()?;
    let test = parse_cifar10_bin(&dir.join("test_batch.bin"))?;
    Ok((LabeledImageSet::concat(&train)?, test))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub image_shape: [usize; 3],
    /// Distance between any two class means.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            per_class: 100,
            image_shape: [3, 8, 8],
            separation: 4.0,
            seed: 0,
        }
    }
}

/// Gaussian class blobs with unit within-class variance. Class means are
/// `s/√2` times orthonormal random directions, so every pair of means is
/// exactly `s` apart. Examples are stored class by class.
pub fn synth_dataset(spec: &SyntheticSpec) -> Result<LabeledImageSet> {
    let [c, h, w] = spec.image_shape;
    let dim = c * h * w;
    if spec.classes < 2 {
        return Err(Error::Config("synthetic data needs at least two classes".into()));
    }
    if spec.classes > dim {
        return Err(Error::Config(format!(
            "{} classes cannot have orthogonal means in {dim} dimensions",
            spec.classes
        )));
    }
    if spec.per_class == 0 || dim == 0 || !(spec.separation >= 0.0) {
        return Err(Error::Config("invalid synthetic dataset spec".into()));
    }
    let mut dir_rng = SeededRng::new(spec.seed, 0);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    while means.len() < spec.classes {
        let mut v: Vec<f64> = (0..dim).map(|_| dir_rng.normal()).collect();
        for m in &means {
            let p: f64 = v.iter().zip(m).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(m).for_each(|(a, b)| *a -= p * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            means.push(v);
        }
    }
    let scale = spec.separation / std::f64::consts::SQRT_2;
    let mut noise = SeededRng::new(spec.seed, 1);
    let n = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (k, m) in means.iter().enumerate() {
        for _ in 0..spec.per_class {
            data.extend(m.iter().map(|&mu| scale * mu + noise.normal()));
            labels.push(k);
        }
    }
    LabeledImageSet::new(Tensor::new(&[n, c, h, w], data)?, labels)
}

/// Pads by [`AUGMENT_PAD`] zeros on every side, crops the original size at
/// offset `(top, left)` in the padded image, and optionally mirrors
/// left–right. `(4, 4)` without flip is the identity.
pub fn augment_with(image: &Tensor, top: usize, left: usize, flip: bool) -> Result<Tensor> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::dim(format!("augment needs a [c, h, w] image, got {:?}", image.shape())));
    };
    if top > 2 * AUGMENT_PAD || left > 2 * AUGMENT_PAD {
        return Err(Error::Value("crop offset outside the padded image".into()));
    }
    let src = image.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for x in 0..h {
            let sx = (x + top) as isize - AUGMENT_PAD as isize;
            if sx < 0 || sx >= h as isize {
                continue;
            }
            for y in 0..w {
                let sy = (y + left) as isize - AUGMENT_PAD as isize;
                if sy < 0 || sy >= w as isize {
                    continue;
                }
                let dy = if flip { w - 1 - y } else { y };
                out[(ch * h + x) * w + dy] = src[(ch * h + sx as usize) * w + sy as usize];
            }
        }
    }
    Tensor::new(image.shape(), out)
}

/// Random crop from the zero-padded image and a horizontal flip with
/// probability 1/2.
pub fn augment(image: &Tensor, rng: &mut SeededRng) -> Result<Tensor> {
    let top = rng.below(2 * AUGMENT_PAD + 1);
    let left = rng.below(2 * AUGMENT_PAD + 1);
    let flip = rng.coin();
    augment_with(image, top, left, flip)
}

pub fn augment_batch(batch: &Batch, rng: &mut SeededRng) -> Result<Batch> {
    let (b, c, h, w) = batch.inputs.dims4()?;
    let mut data = Vec::with_capacity(batch.inputs.len());
    for i in 0..b {
        let img = batch.inputs.row(i)?.into_reshaped(&[c, h, w])?;
        data.extend(augment(&img, rng)?.into_data());
    }
    Batch::new(Tensor::new(&[b, c, h, w], data)?, batch.labels.clone())
}

pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and standard deviation of a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(set: &LabeledImageSet) -> Result<Self> {
        let images = set.images.as_ref().ok_or_else(|| Error::Size("empty training set".into()))?;
        let (n, c, h, w) = images.dims4()?;
        let plane = h * w;
        let count = (n * plane) as f64;
        let d = images.data();
        let chan = |ci: usize| (0..n).flat_map(move |i| &d[(i * c + ci) * plane..(i * c + ci + 1) * plane]);
        let mean: Vec<f64> = (0..c).map(|ci| chan(ci).sum::<f64>() / count).collect();
        let std = (0..c)
            .map(|ci| (chan(ci).map(|v| (v - mean[ci]).powi(2)).sum::<f64>() / count).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, set: &mut LabeledImageSet) -> Result<()> {
        let Some(images) = set.images.as_mut() else {
            return Ok(());
        };
        let (n, c, h, w) = images.dims4()?;
        if c != self.mean.len() {
            return Err(Error::dim("channel count differs from fitted statistics"));
        }
        let plane = h * w;
        let d = images.data_mut();
        for i in 0..n {
            for ci in 0..c {
                let (m, s) = (self.mean[ci], self.std[ci].max(STD_FLOOR));
                for v in &mut d[(i * c + ci) * plane..(i * c + ci + 1) * plane] {
                    *v = (*v - m) / s;
                }
            }
        }
        Ok(())
    }
}

/// Standardizes `train` and every set in `others` with the training set's
/// channel statistics.
pub fn preprocess(train: &mut LabeledImageSet, others: &mut [&mut LabeledImageSet]) -> Result<ChannelStats> {
    let stats = ChannelStats::fit(train)?;
    stats.apply(train)?;
    for s in others.iter_mut() {
        stats.apply(s)?;
    }
    Ok(stats)
}
