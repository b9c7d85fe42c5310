//! Dataset ingestion, normalization and deterministic batching.
//!
//! File formats are byte-exact: IDX ([`idx`]) and the CIFAR-10 binary layout
//! ([`cifar`]). [`synth`] generates deterministic synthetic datasets (noise
//! sets, and the glyph families used when no real files are available).

pub mod cifar;
pub mod idx;
pub mod synth;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    InDistribution,
    OutOfDistribution,
}

/// Per-channel-agnostic scalar statistics recorded with every dataset.
/// Pixels are mapped as `(pixel01 - mean) / std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f32,
    pub std: f32,
}

impl Normalization {
    pub fn apply(&self, pixel01: f32) -> f32 {
        (pixel01 - self.mean) / self.std
    }

    pub fn invert(&self, value: f32) -> f32 {
        value * self.std + self.mean
    }
}

/// Unnormalized dataset: pixel values in [0,1], NCHW.
#[derive(Clone, Debug)]
pub struct RawDataset {
    pub name: String,
    pub shape: [usize; 4],
    pub pixels01: Vec<f32>,
    pub labels: Option<Vec<u8>>,
    pub role: DatasetRole,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    /// Scalar mean/std over all pixels (population std).
    pub fn statistics(&self) -> Normalization {
        let n = self.pixels01.len().max(1) as f64;
        let mean = self.pixels01.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .pixels01
            .iter()
            .map(|&v| (v as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        Normalization {
            mean: mean as f32,
            std: (var.sqrt().max(1e-6)) as f32,
        }
    }

    /// Zero-pad spatial dims up to the next multiple of 4 so the two pooling
    /// stages always see even sizes. No-op for 28x28 and 32x32 inputs.
    pub fn pad_spatial_to_multiple_of_4(mut self) -> RawDataset {
        let [n, c, h, w] = self.shape;
        let ph = h.div_ceil(4) * 4;
        let pw = w.div_ceil(4) * 4;
        if ph == h && pw == w {
            return self;
        }
        let mut out = vec![0.0f32; n * c * ph * pw];
        for img in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    let src = &self.pixels01[((img * c + ch) * h + y) * w..][..w];
                    let dst = &mut out[((img * c + ch) * ph + y) * pw..][..w];
                    dst.copy_from_slice(src);
                }
            }
        }
        self.pixels01 = out;
        self.shape = [n, c, ph, pw];
        self
    }

    /// Normalize with the given statistics (for OOD sets these are the ID
    /// statistics) into a training-ready dataset.
    pub fn normalize(self, norm: Normalization) -> Result<LabeledDataset> {
        let padded = self.pad_spatial_to_multiple_of_4();
        if let Some(labels) = &padded.labels {
            if labels.len() != padded.shape[0] {
                return Err(Error::shape(
                    "dataset",
                    format!(
                        "{} images but {} labels in {}",
                        padded.shape[0],
                        labels.len(),
                        padded.name
                    ),
                ));
            }
        }
        let data: Vec<f32> = padded.pixels01.iter().map(|&p| norm.apply(p)).collect();
        let images = Tensor::new(&padded.shape, data)?;
        Ok(LabeledDataset {
            name: padded.name,
            images,
            labels: padded.labels,
            role: padded.role,
            normalization: norm,
        })
    }
}

/// Normalized images plus (for in-distribution sets) integer labels.
///
/// Out-of-distribution sets never expose labels to training code;
/// [`LabeledDataset::labels`] refuses, and only the diagnostics accessor can
/// see them.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    name: String,
    images: Tensor<f32>,
    labels: Option<Vec<u8>>,
    role: DatasetRole,
    normalization: Normalization,
}

impl LabeledDataset {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> DatasetRole {
        self.role
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn len(&self) -> usize {
        self.images.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    /// Labels of an in-distribution dataset. Out-of-distribution roles refuse.
    pub fn labels(&self) -> Result<&[u8]> {
        if self.role == DatasetRole::OutOfDistribution {
            return Err(Error::Usage(format!(
                "labels of out-of-distribution dataset {} are not available to training code",
                self.name
            )));
        }
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("dataset {} has no labels", self.name)))
    }

    /// Label access for reporting/debugging only.
    pub fn labels_for_diagnostics(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    /// Gather image rows by index into a batch tensor.
    pub fn gather_images(&self, indices: &[usize]) -> Tensor<f32> {
        let row = self.images.numel() / self.len().max(1);
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * row..(i + 1) * row]);
        }
        let mut shape = self.images.shape().to_vec();
        shape[0] = indices.len();
        Tensor::new(&shape, data).expect("gather shape")
    }

    pub fn gather_labels(&self, indices: &[usize]) -> Result<Vec<usize>> {
        let labels = self.labels()?;
        Ok(indices.iter().map(|&i| labels[i] as usize).collect())
    }

    /// Deterministic prefix subset (for micro runs).
    pub fn take(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        let row = self.images.numel() / self.len().max(1);
        let mut shape = self.images.shape().to_vec();
        shape[0] = n;
        LabeledDataset {
            name: self.name.clone(),
            images: Tensor::new(&shape, self.images.data()[..n * row].to_vec()).expect("subset"),
            labels: self.labels.as_ref().map(|l| l[..n].to_vec()),
            role: self.role,
            normalization: self.normalization,
        }
    }
}

/// Concatenate out-of-distribution datasets into one training outlier pool.
pub fn union_ood(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
    if parts.is_empty() {
        return Err(Error::Usage("union_ood needs at least one dataset".into()));
    }
    let shape_tail = &parts[0].images.shape()[1..];
    if parts
        .iter()
        .any(|p| &p.images.shape()[1..] != shape_tail || p.role != DatasetRole::OutOfDistribution)
    {
        return Err(Error::Usage(
            "union_ood needs out-of-distribution datasets of identical image shape".into(),
        ));
    }
    let mut data = Vec::new();
    let mut names = Vec::new();
    for p in parts {
        data.extend_from_slice(p.images.data());
        names.push(p.name.as_str());
    }
    let mut shape = parts[0].images.shape().to_vec();
    shape[0] = parts.iter().map(|p| p.len()).sum();
    Ok(LabeledDataset {
        name: names.join("+"),
        images: Tensor::new(&shape, data)?,
        labels: None,
        role: DatasetRole::OutOfDistribution,
        normalization: parts[0].normalization,
    })
}

/// Deterministic batching: same (seed, epoch) gives the same permutation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    pub epoch: u64,
}

/// Index slices covering the dataset; the last partial batch is retained.
/// Shuffling is a seeded Fisher-Yates permutation on stream `epoch + 1`.
pub fn make_batches(ds: &LabeledDataset, plan: &BatchPlan) -> Result<Vec<Vec<usize>>> {
    make_batches_len(ds.len(), plan)
}

pub fn make_batches_len(len: usize, plan: &BatchPlan) -> Result<Vec<Vec<usize>>> {
    if plan.batch_size == 0 {
        return Err(Error::Usage("batch_size must be >= 1".into()));
    }
    let mut indices: Vec<usize> = (0..len).collect();
    if plan.shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        rng.set_stream(plan.epoch + 1);
        for i in (1..len).rev() {
            let j = rng.random_range(0..=i);
            indices.swap(i, j);
        }
    }
    Ok(indices.chunks(plan.batch_size).map(|c| c.to_vec()).collect())
}
