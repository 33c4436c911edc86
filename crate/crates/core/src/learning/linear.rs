//! Multinomial logistic regression on seeded Gaussian-blob data.
//!
//! Each class has a fixed mean drawn from the task seed; a client's dataset
//! holds `class_counts[c]` points around mean `c`. The model vector stores,
//! for each class, `dimension` weights followed by one bias.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mix_seed, stable_hash, Learner, LearningError, ModelVector, TrainingParams};
use crate::topology::{DataProfile, NodeId};

fn default_classes() -> u32 {
    10
}
fn default_dimension() -> usize {
    8
}
fn default_separation() -> f64 {
    2.0
}
fn default_spread() -> f64 {
    1.0
}
fn default_eval() -> u64 {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTaskSpec {
    #[serde(default = "default_classes")]
    pub num_classes: u32,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    /// Standard deviation of the class means around the origin.
    #[serde(default = "default_separation")]
    pub class_separation: f64,
    /// Standard deviation of points around their class mean.
    #[serde(default = "default_spread")]
    pub cluster_std: f64,
    #[serde(default = "default_eval")]
    pub eval_samples_per_class: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub dimension: usize,
    /// Row-major, `len() * dimension` values.
    pub features: Vec<f64>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dimension..(i + 1) * self.dimension]
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idx.len() * self.dimension);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            dimension: self.dimension,
            features,
            labels,
        }
    }
}

pub fn model_dimension(num_classes: u32, dimension: usize) -> usize {
    num_classes as usize * (dimension + 1)
}

fn logits(model: &[f64], x: &[f64], num_classes: usize) -> Vec<f64> {
    let stride = x.len() + 1;
    (0..num_classes)
        .map(|k| {
            let w = &model[k * stride..(k + 1) * stride];
            w[..x.len()].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + w[x.len()]
        })
        .collect()
}

fn softmax(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

fn num_classes_of(model: &ModelVector, data: &Dataset) -> Result<usize, LearningError> {
    let stride = data.dimension + 1;
    if !model.dimension().is_multiple_of(stride) || model.dimension() == 0 {
        return Err(LearningError::DimensionMismatch(model.dimension(), stride));
    }
    Ok(model.dimension() / stride)
}

/// Mean cross-entropy.
pub fn softmax_loss(model: &ModelVector, data: &Dataset) -> Result<f64, LearningError> {
    if data.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    let k = num_classes_of(model, data)?;
    let mut loss = 0.0;
    for i in 0..data.len() {
        let mut z = logits(&model.0, data.row(i), k);
        softmax(&mut z);
        loss -= z[data.labels[i] as usize].max(f64::MIN_POSITIVE).ln();
    }
    Ok(loss / data.len() as f64)
}

/// Gradient of [`softmax_loss`] with respect to the model vector.
pub fn softmax_gradient(model: &ModelVector, data: &Dataset) -> Result<Vec<f64>, LearningError> {
    if data.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    let k = num_classes_of(model, data)?;
    let d = data.dimension;
    let mut grad = vec![0.0; model.dimension()];
    for i in 0..data.len() {
        let x = data.row(i);
        let mut p = logits(&model.0, x, k);
        softmax(&mut p);
        p[data.labels[i] as usize] -= 1.0;
        for (c, err) in p.iter().enumerate() {
            let g = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
            for (gj, xj) in g[..d].iter_mut().zip(x) {
                *gj += err * xj;
            }
            g[d] += err;
        }
    }
    let n = data.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// Fraction of `eval_set` whose arg-max class matches the label.
pub fn evaluate_global(model: &ModelVector, eval_set: &Dataset) -> Result<f64, LearningError> {
    if eval_set.is_empty() {
        return Err(LearningError::EmptyDataset);
    }
    let k = num_classes_of(model, eval_set)?;
    let correct = (0..eval_set.len())
        .filter(|&i| {
            let z = logits(&model.0, eval_set.row(i), k);
            // first maximum wins
            let best = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (c, &v)| if v > acc.1 { (c, v) } else { acc });
            best.0 as u32 == eval_set.labels[i]
        })
        .count();
    Ok(correct as f64 / eval_set.len() as f64)
}

/// One pass of mini-batch gradient descent per epoch, shuffled by `seed`.
pub fn sgd_epochs(
    model: &ModelVector,
    data: &Dataset,
    epochs: u32,
    learning_rate: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ModelVector, LearningError> {
    let mut w = model.clone();
    if data.is_empty() || learning_rate == 0.0 {
        return Ok(w);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size.max(1)) {
            let g = softmax_gradient(&w, &data.subset(chunk))?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(LearningError::LearnerFailure("non-finite gradient".into()));
            }
            for (wi, gi) in w.0.iter_mut().zip(&g) {
                *wi -= learning_rate * gi;
            }
        }
    }
    Ok(w)
}

pub struct LinearClassifier {
    spec: LinearTaskSpec,
    means: Vec<Vec<f64>>,
    eval_set: Dataset,
    client_data: Mutex<HashMap<NodeId, Dataset>>,
}

impl LinearClassifier {
    pub fn new(spec: LinearTaskSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[spec.seed, stable_hash(b"class-means")]));
        let means: Vec<Vec<f64>> = (0..spec.num_classes)
            .map(|_| {
                (0..spec.dimension)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * spec.class_separation
                    })
                    .collect()
            })
            .collect();
        let eval_profile = DataProfile::new(
            (0..spec.num_classes)
                .map(|c| (c, spec.eval_samples_per_class))
                .collect(),
        );
        let eval_set = blobs(&means, spec.cluster_std, &eval_profile, mix_seed(&[spec.seed, stable_hash(b"eval")]));
        LinearClassifier {
            spec,
            means,
            eval_set,
            client_data: Mutex::new(HashMap::new()),
        }
    }

    pub fn eval_set(&self) -> &Dataset {
        &self.eval_set
    }

    pub fn client_dataset(&self, client: &NodeId, profile: &DataProfile) -> Dataset {
        let mut cache = self.client_data.lock().expect("dataset cache poisoned");
        cache
            .entry(client.clone())
            .or_insert_with(|| {
                let seed = mix_seed(&[self.spec.seed, stable_hash(client.as_str().as_bytes())]);
                blobs(&self.means, self.spec.cluster_std, profile, seed)
            })
            .clone()
    }
}

/// Points around the class means; classes outside the means are skipped.
pub fn blobs(means: &[Vec<f64>], std: f64, profile: &DataProfile, seed: u64) -> Dataset {
    let dimension = means.first().map_or(0, Vec::len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, std.max(0.0)).expect("non-negative std");
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (&class, &count) in &profile.class_counts {
        let Some(mean) = means.get(class as usize) else { continue };
        for _ in 0..count {
            features.extend(mean.iter().map(|m| m + noise.sample(&mut rng)));
            labels.push(class);
        }
    }
    Dataset {
        dimension,
        features,
        labels,
    }
}

impl Learner for LinearClassifier {
    fn initial_model(&self) -> ModelVector {
        ModelVector::zeros(model_dimension(self.spec.num_classes, self.spec.dimension))
    }

    fn train_local(
        &self,
        client: &NodeId,
        model: &ModelVector,
        profile: &DataProfile,
        params: &TrainingParams,
        step_seed: u64,
    ) -> Result<ModelVector, LearningError> {
        let data = self.client_dataset(client, profile);
        sgd_epochs(
            model,
            &data,
            params.local_epochs,
            params.learning_rate,
            params.batch_size as usize,
            step_seed,
        )
    }

    fn evaluate(&self, model: &ModelVector, _round: u32, _participants: &[&DataProfile]) -> Result<f64, LearningError> {
        evaluate_global(model, &self.eval_set)
    }
}
