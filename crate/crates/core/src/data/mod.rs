//! Labelled datasets, per-agent shards and mini-batch sampling.

mod idx;
mod partition;
mod sampler;
mod synthetic;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, load_mnist, parse_idx, MnistFiles};
pub use partition::{partition, PartitionPlan, Shard, ShardedDataset};
pub use sampler::BatchSampler;
pub use synthetic::{make_synthetic, SyntheticSpec};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DataError {
    #[error("bad IDX magic: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("truncated IDX file: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("missing data file {0}")]
    MissingFile(String),
    #[error("feature buffer of length {len} is not a multiple of dimension {dim}")]
    RaggedFeatures { len: usize, dim: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("feature value {0} outside [0, 1]")]
    FeatureOutOfRange(f32),
    #[error("agent {agent}: need {needed} samples, only {available} eligible")]
    InsufficientSamples {
        agent: usize,
        needed: usize,
        available: usize,
    },
    #[error("cannot restrict to {requested} classes out of {num_classes}")]
    TooManyClasses { requested: usize, num_classes: usize },
    #[error("empty shard")]
    EmptyShard,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One labelled example borrowed from a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample<'a> {
    pub features: &'a [f32],
    pub label: usize,
}

/// A pool of labelled feature vectors with a common dimension.
///
/// Features are stored row-major as `f32` in `[0, 1]`; the model widens
/// them to `f64` on the fly.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        feature_dim: usize,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        if feature_dim == 0 || num_classes == 0 {
            return Err(DataError::InvalidArgument(
                "feature dimension and class count must be positive".into(),
            ));
        }
        if !features.len().is_multiple_of(feature_dim) {
            return Err(DataError::RaggedFeatures {
                len: features.len(),
                dim: feature_dim,
            });
        }
        let rows = features.len() / feature_dim;
        if rows != labels.len() {
            return Err(DataError::CountMismatch {
                images: rows,
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::LabelOutOfRange { label, num_classes });
        }
        if let Some(&x) = features.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(DataError::FeatureOutOfRange(x));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> Sample<'_> {
        Sample {
            features: &self.features[i * self.feature_dim..(i + 1) * self.feature_dim],
            label: self.labels[i],
        }
    }

    pub fn samples(&self) -> impl Iterator<Item = Sample<'_>> + '_ {
        (0..self.len()).map(move |i| self.sample(i))
    }

    /// Gathers the given rows into a new dataset (repeats allowed).
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let s = self.sample(i);
            features.extend_from_slice(s.features);
            labels.push(s.label);
        }
        LabeledDataset {
            features,
            labels,
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
        }
    }

    /// Row indices grouped by class, ascending within each class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}
