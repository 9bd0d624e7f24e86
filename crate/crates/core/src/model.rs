//! Fully connected ReLU classifier over a flat parameter vector.
//!
//! The protocol only ever sees `w` as a point in `R^M`; this module owns
//! the mapping between that vector and the layer matrices. Layer `l` stores
//! its weights row-major as `fan_out x fan_in`, followed by `fan_out`
//! biases.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{LabeledDataset, Sample};
use crate::seed::rng_from;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFiniteValue(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("malformed parameter encoding: {0}")]
    Decode(String),
}

/// A real vector of model parameters (`w`, `psi` or `delta`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check_len(&self, other: &ParamVector) -> Result<(), ModelError> {
        if self.len() == other.len() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            })
        }
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64, ModelError> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector, ModelError> {
        self.check_len(other)?;
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect()))
    }

    /// `self += alpha * x`.
    pub fn axpy(&mut self, alpha: f64, x: &ParamVector) -> Result<(), ModelError> {
        self.check_len(x)?;
        for (y, xi) in self.0.iter_mut().zip(&x.0) {
            *y += alpha * xi;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        Self(self.0.iter().map(|x| alpha * x).collect())
    }

    /// Little-endian `u64` length followed by little-endian `f64` values.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.0.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    /// Decodes one vector from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn read_from(bytes: &[u8]) -> Result<(ParamVector, usize), ModelError> {
        let head: [u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| ModelError::Decode("missing length prefix".into()))?;
        let len = u64::from_le_bytes(head) as usize;
        let end = len
            .checked_mul(8)
            .and_then(|n| n.checked_add(8))
            .ok_or_else(|| ModelError::Decode("length overflow".into()))?;
        let body = bytes
            .get(8..end)
            .ok_or_else(|| ModelError::Decode(format!("need {end} bytes, have {}", bytes.len())))?;
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok((Self(values), end))
    }
}

/// Returns `w - mu * grad`.
pub fn sgd_step(w: &ParamVector, grad: &ParamVector, mu: f64) -> Result<ParamVector, ModelError> {
    let mut out = w.clone();
    out.axpy(-mu, grad)?;
    Ok(out)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    pub init_seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            num_classes,
            init_seed: 0,
        }
    }

    /// `[F, h_1, ..., h_L, C]`.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.num_classes);
        dims
    }

    /// `M = sum over layers of fan_in * fan_out + fan_out`.
    pub fn num_params(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layer {
    fan_in: usize,
    fan_out: usize,
    weights: usize,
    biases: usize,
}

/// An MLP bound to a spec, with precomputed parameter offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layers: Vec<Layer>,
    num_params: usize,
}

impl Mlp {
    pub fn new(spec: MlpSpec) -> Result<Self, ModelError> {
        if spec.input_dim == 0 || spec.num_classes == 0 || spec.hidden_dims.contains(&0) {
            return Err(ModelError::InvalidSpec(
                "all layer widths must be positive".into(),
            ));
        }
        let mut layers = Vec::new();
        let mut offset = 0;
        for w in spec.layer_dims().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            layers.push(Layer {
                fan_in,
                fan_out,
                weights: offset,
                biases: offset + fan_in * fan_out,
            });
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Self {
            spec,
            layers,
            num_params: offset,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Parameter ranges `(weights, biases)` of each layer.
    pub fn layer_slots(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        self.layers
            .iter()
            .map(|l| (l.weights..l.biases, l.biases..l.biases + l.fan_out))
            .collect()
    }

    /// Initial parameters from the spec's own seed.
    pub fn init_params(&self) -> ParamVector {
        self.init_params_with(&mut rng_from(self.spec.init_seed, b"mlp-init"))
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    pub fn init_params_with<R: Rng>(&self, rng: &mut R) -> ParamVector {
        let mut w = vec![0.0; self.num_params];
        for l in &self.layers {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for x in &mut w[l.weights..l.biases] {
                *x = rng.random_range(-bound..=bound);
            }
        }
        ParamVector(w)
    }

    fn check_params(&self, w: &ParamVector) -> Result<(), ModelError> {
        if w.len() != self.num_params {
            return Err(ModelError::DimensionMismatch {
                expected: self.num_params,
                found: w.len(),
            });
        }
        // ReLU's max(0, NaN) would silently swallow poisoned parameters
        if !w.is_finite() {
            return Err(ModelError::NonFiniteValue("parameters"));
        }
        Ok(())
    }

    fn check_sample(&self, s: &Sample<'_>) -> Result<(), ModelError> {
        if s.features.len() != self.spec.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.spec.input_dim,
                found: s.features.len(),
            });
        }
        if s.label >= self.spec.num_classes {
            return Err(ModelError::LabelOutOfRange {
                label: s.label,
                num_classes: self.spec.num_classes,
            });
        }
        Ok(())
    }

    /// Pre-activations of every layer for one input. The last entry holds
    /// the logits.
    fn forward(&self, w: &[f64], features: &[f32]) -> Vec<Vec<f64>> {
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut input: Vec<f64> = features.iter().map(|&x| f64::from(x)).collect();
        for (i, l) in self.layers.iter().enumerate() {
            let weights = &w[l.weights..l.biases];
            let biases = &w[l.biases..l.biases + l.fan_out];
            let z: Vec<f64> = weights
                .chunks_exact(l.fan_in)
                .zip(biases)
                .map(|(row, b)| b + row.iter().zip(&input).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            if i + 1 < self.layers.len() {
                input = z.iter().map(|&v| v.max(0.0)).collect();
            }
            pre.push(z);
        }
        pre
    }

    pub fn logits(&self, w: &ParamVector, features: &[f32]) -> Result<Vec<f64>, ModelError> {
        self.check_params(w)?;
        if features.len() != self.spec.input_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.spec.input_dim,
                found: features.len(),
            });
        }
        Ok(self.forward(w.as_slice(), features).pop().expect("at least one layer"))
    }

    /// Mean softmax cross-entropy over `batch` and its exact gradient.
    pub fn loss_and_gradient(
        &self,
        w: &ParamVector,
        batch: &[Sample<'_>],
    ) -> Result<(f64, ParamVector), ModelError> {
        self.check_params(w)?;
        if batch.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let params = w.as_slice();
        let mut grad = vec![0.0; self.num_params];
        let mut total_loss = 0.0;

        for s in batch {
            self.check_sample(s)?;
            let pre = self.forward(params, s.features);
            let logits = pre.last().expect("at least one layer");
            total_loss += log_sum_exp(logits) - logits[s.label];

            let mut dz = softmax(logits);
            dz[s.label] -= 1.0;
            for (i, l) in self.layers.iter().enumerate().rev() {
                let input: Vec<f64> = if i == 0 {
                    s.features.iter().map(|&x| f64::from(x)).collect()
                } else {
                    pre[i - 1].iter().map(|&v| v.max(0.0)).collect()
                };
                for (o, &d) in dz.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &mut grad[l.weights + o * l.fan_in..l.weights + (o + 1) * l.fan_in];
                    for (g, x) in row.iter_mut().zip(&input) {
                        *g += d * x;
                    }
                    grad[l.biases + o] += d;
                }
                if i > 0 {
                    let weights = &params[l.weights..l.biases];
                    let mut da = vec![0.0; l.fan_in];
                    for (row, &d) in weights.chunks_exact(l.fan_in).zip(&dz) {
                        if d == 0.0 {
                            continue;
                        }
                        for (a, wv) in da.iter_mut().zip(row) {
                            *a += d * wv;
                        }
                    }
                    dz = da
                        .into_iter()
                        .zip(&pre[i - 1])
                        .map(|(a, &z)| if z > 0.0 { a } else { 0.0 })
                        .collect();
                }
            }
        }

        let n = batch.len() as f64;
        let loss = total_loss / n;
        for g in &mut grad {
            *g /= n;
        }
        let grad = ParamVector(grad);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteValue("loss"));
        }
        if !grad.is_finite() {
            return Err(ModelError::NonFiniteValue("gradient"));
        }
        Ok((loss, grad))
    }

    /// Mean cross-entropy without the gradient.
    pub fn loss<'a>(
        &self,
        w: &ParamVector,
        samples: impl IntoIterator<Item = Sample<'a>>,
    ) -> Result<f64, ModelError> {
        Ok(self.evaluate(w, samples)?.loss)
    }

    /// Accuracy and mean loss over `samples` in one pass.
    pub fn evaluate<'a>(
        &self,
        w: &ParamVector,
        samples: impl IntoIterator<Item = Sample<'a>>,
    ) -> Result<Evaluation, ModelError> {
        self.check_params(w)?;
        let mut correct = 0usize;
        let mut loss = 0.0;
        let mut count = 0usize;
        for s in samples {
            self.check_sample(&s)?;
            let pre = self.forward(w.as_slice(), s.features);
            let logits = pre.last().expect("at least one layer");
            if argmax(logits) == s.label {
                correct += 1;
            }
            loss += log_sum_exp(logits) - logits[s.label];
            count += 1;
        }
        if count == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let eval = Evaluation {
            accuracy: correct as f64 / count as f64,
            loss: loss / count as f64,
        };
        if !eval.loss.is_finite() {
            return Err(ModelError::NonFiniteValue("loss"));
        }
        Ok(eval)
    }

    /// Fraction of `test` classified correctly (argmax, ties to the lowest
    /// class id).
    pub fn predict_accuracy(&self, w: &ParamVector, test: &LabeledDataset) -> Result<f64, ModelError> {
        Ok(self.evaluate(w, test.samples())?.accuracy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}
