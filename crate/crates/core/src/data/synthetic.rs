use std::collections::HashSet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, LabeledDataset};
use crate::seed::rng_from;

/// Class-conditional Gaussian blobs.
///
/// Class means are distinct points of the lattice `{0, 1/(L-1), ..., 1}^F`
/// with the smallest `L >= 2` that fits `C` classes, so means are at least
/// unit distance apart whenever `C <= 2^F`. The means depend only on
/// `(C, F)`; `seed` drives the noise, so train and test sets drawn with
/// different seeds describe the same task. Features are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_samples: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_samples: usize, num_classes: usize, feature_dim: usize, seed: u64) -> Self {
        Self {
            num_samples,
            num_classes,
            feature_dim,
            noise: 0.25,
            seed,
        }
    }

    pub fn generate(&self) -> Result<LabeledDataset, DataError> {
        if self.num_samples == 0 || self.num_classes == 0 || self.feature_dim == 0 {
            return Err(DataError::InvalidArgument(
                "synthetic data needs positive sample count, classes and dimension".into(),
            ));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(DataError::InvalidArgument(format!(
                "noise must be a finite non-negative number, got {}",
                self.noise
            )));
        }
        let means = class_means(self.num_classes, self.feature_dim);
        let normal = Normal::new(0.0, self.noise).expect("validated noise");
        let mut rng = rng_from(self.seed, b"synthetic-noise");
        let mut features = Vec::with_capacity(self.num_samples * self.feature_dim);
        let mut labels = Vec::with_capacity(self.num_samples);
        for i in 0..self.num_samples {
            let label = i % self.num_classes;
            labels.push(label);
            for &m in &means[label] {
                let x = m + normal.sample(&mut rng);
                features.push(x.clamp(0.0, 1.0) as f32);
            }
        }
        LabeledDataset::new(features, labels, self.feature_dim, self.num_classes)
    }
}

/// Convenience wrapper with the default noise level.
pub fn make_synthetic(
    num_samples: usize,
    num_classes: usize,
    feature_dim: usize,
    seed: u64,
) -> Result<LabeledDataset, DataError> {
    SyntheticSpec::new(num_samples, num_classes, feature_dim, seed).generate()
}

fn class_means(num_classes: usize, feature_dim: usize) -> Vec<Vec<f64>> {
    let mut levels = 2usize;
    while !lattice_fits(levels, feature_dim, num_classes) {
        levels += 1;
    }
    let step = 1.0 / (levels - 1) as f64;
    let mut rng = rng_from(
        ((num_classes as u64) << 32) | feature_dim as u64,
        b"synthetic-means",
    );
    let mut seen = HashSet::new();
    let mut means = Vec::with_capacity(num_classes);
    while means.len() < num_classes {
        let code: Vec<usize> = (0..feature_dim).map(|_| rng.random_range(0..levels)).collect();
        if seen.insert(code.clone()) {
            means.push(code.iter().map(|&c| c as f64 * step).collect());
        }
    }
    means
}

fn lattice_fits(levels: usize, dim: usize, classes: usize) -> bool {
    let mut capacity = 1usize;
    for _ in 0..dim {
        capacity = capacity.saturating_mul(levels);
        if capacity >= classes {
            return true;
        }
    }
    capacity >= classes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_and_deterministic() {
        let a = make_synthetic(1000, 4, 2, 3).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.class_counts(), vec![250; 4]);
        assert_eq!(a, make_synthetic(1000, 4, 2, 3).unwrap());
        assert_ne!(a, make_synthetic(1000, 4, 2, 4).unwrap());
    }

    #[test]
    fn one_sample_per_class() {
        let d = make_synthetic(10, 10, 2, 5).unwrap();
        assert_eq!(d.class_counts(), vec![1; 10]);
    }

    #[test]
    fn means_are_unit_separated_on_the_hypercube() {
        let means = class_means(4, 2);
        for i in 0..4 {
            for j in i + 1..4 {
                let d: f64 = means[i]
                    .iter()
                    .zip(&means[j])
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(d >= 1.0 - 1e-12);
            }
        }
        // means do not depend on the sampling seed
        assert_eq!(class_means(10, 16), class_means(10, 16));
    }

    #[test]
    fn rejects_zero_arguments() {
        assert!(make_synthetic(0, 2, 2, 1).is_err());
        assert!(make_synthetic(5, 0, 2, 1).is_err());
        assert!(make_synthetic(5, 2, 0, 1).is_err());
    }
}
