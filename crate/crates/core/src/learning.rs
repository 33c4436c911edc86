//! Synchronous two-level FedAvg pipeline over pluggable learners.
//!
//! A global round runs `L` local rounds (clients train, each LA averages its
//! cluster) and then one global aggregation at the GA. Clients are visited in
//! node-id order so floating-point summation order is fixed.

pub mod linear;
mod synthetic;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::HflConfiguration;
use crate::topology::{DataProfile, NodeId, Topology};

pub use linear::{evaluate_global, Dataset, LinearClassifier, LinearTaskSpec};
pub use synthetic::{synthetic_accuracy, SyntheticCurve, SyntheticCurveParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error("model dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("nothing to aggregate")]
    EmptyInput,
    #[error("cluster of `{0}` has no clients")]
    EmptyCluster(NodeId),
    #[error("learner failure: {0}")]
    LearnerFailure(String),
    #[error("evaluation set is empty")]
    EmptyDataset,
    #[error("client `{0}` has no data profile in the topology")]
    MissingProfile(NodeId),
}

/// Dense model weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dimension: usize) -> Self {
        ModelVector(vec![0.0; dimension])
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|w| w.is_finite())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Sample-count weighted mean of model vectors.
pub fn fedavg(models: &[(&ModelVector, u64)]) -> Result<ModelVector, LearningError> {
    let (first, _) = models.first().ok_or(LearningError::EmptyInput)?;
    let dim = first.dimension();
    if let Some((m, _)) = models.iter().find(|(m, _)| m.dimension() != dim) {
        return Err(LearningError::DimensionMismatch(dim, m.dimension()));
    }
    let total: u64 = models.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(LearningError::EmptyInput);
    }
    if models.len() == 1 {
        return Ok((*first).clone());
    }
    let total = total as f64;
    let mut out = vec![0.0; dim];
    for (m, n) in models {
        let w = *n as f64 / total;
        for (o, x) in out.iter_mut().zip(&m.0) {
            *o += w * x;
        }
    }
    Ok(ModelVector(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub local_epochs: u32,
    pub local_rounds: u32,
    pub learning_rate: f64,
    pub batch_size: u32,
    pub seed: u64,
}

pub trait Learner: Send + Sync {
    fn initial_model(&self) -> ModelVector;

    /// One client's local training from `model`. `step_seed` is unique per
    /// (run seed, global round, local round, client).
    fn train_local(
        &self,
        client: &NodeId,
        model: &ModelVector,
        profile: &DataProfile,
        params: &TrainingParams,
        step_seed: u64,
    ) -> Result<ModelVector, LearningError>;

    /// Held-out accuracy of the global model after `round`.
    fn evaluate(
        &self,
        model: &ModelVector,
        round: u32,
        participants: &[&DataProfile],
    ) -> Result<f64, LearningError>;
}

/// Learner selection as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    SyntheticCurve(SyntheticCurveParams),
    LinearClassifier(LinearTaskSpec),
}

impl LearnerKind {
    pub fn build(&self) -> Box<dyn Learner> {
        match self {
            LearnerKind::SyntheticCurve(p) => Box::new(SyntheticCurve::new(p.clone())),
            LearnerKind::LinearClassifier(spec) => Box::new(LinearClassifier::new(spec.clone())),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            LearnerKind::SyntheticCurve(p) => p.seed = seed,
            LearnerKind::LinearClassifier(s) => s.seed = seed,
        }
    }
}

/// FNV-1a, stable across platforms and releases.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// splitmix64 finalizer over a running combination.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9e37_79b9_7f4a_7c15;
    for p in parts {
        z = z.wrapping_add(*p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub model: ModelVector,
    /// Last completed global round.
    pub round: u32,
}

impl PipelineState {
    pub fn new(model: ModelVector) -> Self {
        PipelineState { model, round: 0 }
    }
}

fn profile_of<'a>(topology: &'a Topology, client: &NodeId) -> Result<&'a DataProfile, LearningError> {
    topology
        .node(client)
        .and_then(|n| n.data_profile.as_ref())
        .ok_or_else(|| LearningError::MissingProfile(client.clone()))
}

/// Runs one global round and returns the next state with the new model's
/// held-out accuracy. Local epochs and rounds come from the configuration.
pub fn run_global_round(
    state: &PipelineState,
    config: &HflConfiguration,
    topology: &Topology,
    params: &TrainingParams,
    learner: &dyn Learner,
) -> Result<(PipelineState, f64), LearningError> {
    let round = state.round + 1;
    let local_params = TrainingParams {
        local_epochs: config.frequency.local_epochs,
        local_rounds: config.frequency.local_rounds,
        ..*params
    };

    let mut la_models = Vec::with_capacity(config.clusters.len());
    let mut participants = Vec::new();
    for (la, clients) in &config.clusters {
        if clients.is_empty() {
            return Err(LearningError::EmptyCluster(la.clone()));
        }
        let profiles = clients
            .iter()
            .map(|c| profile_of(topology, c).map(|p| (c, p)))
            .collect::<Result<Vec<_>, _>>()?;
        let cluster_samples: u64 = profiles.iter().map(|(_, p)| p.total_samples()).sum();

        let mut cluster_model = state.model.clone();
        for local_round in 1..=local_params.local_rounds {
            let mut updates = Vec::with_capacity(profiles.len());
            for (client, profile) in &profiles {
                let seed = mix_seed(&[
                    params.seed,
                    u64::from(round),
                    u64::from(local_round),
                    stable_hash(client.as_str().as_bytes()),
                ]);
                let m = learner.train_local(client, &cluster_model, profile, &local_params, seed)?;
                if !m.is_finite() {
                    return Err(LearningError::LearnerFailure(format!(
                        "non-finite weights from `{client}`"
                    )));
                }
                updates.push((m, profile.total_samples()));
            }
            let refs: Vec<_> = updates.iter().map(|(m, n)| (m, *n)).collect();
            cluster_model = fedavg(&refs)?;
        }
        la_models.push((cluster_model, cluster_samples));
        participants.extend(profiles.into_iter().map(|(_, p)| p));
    }
    let refs: Vec<_> = la_models.iter().map(|(m, n)| (m, *n)).collect();
    let global = fedavg(&refs)?;
    let accuracy = learner.evaluate(&global, round, &participants)?;
    Ok((PipelineState { model: global, round }, accuracy))
}

/// Accuracy history of a run plus the currently active configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgressTrace {
    pub accuracies: Vec<(u32, f64)>,
    pub current_round: u32,
    pub active_config: HflConfiguration,
}

impl ProgressTrace {
    pub fn new(active_config: HflConfiguration) -> Self {
        ProgressTrace {
            accuracies: Vec::new(),
            current_round: 0,
            active_config,
        }
    }

    /// Records the accuracy of a completed round. Rounds must increase.
    pub fn record(&mut self, round: u32, accuracy: f64) {
        assert!(
            round > self.current_round,
            "round {round} recorded after {}",
            self.current_round
        );
        self.accuracies.push((round, accuracy));
        self.current_round = round;
    }

    /// Points up to and including `round`.
    pub fn up_to(&self, round: u32) -> Vec<(u32, f64)> {
        self.accuracies.iter().copied().filter(|(r, _)| *r <= round).collect()
    }

    /// Points strictly after `round`.
    pub fn after(&self, round: u32) -> Vec<(u32, f64)> {
        self.accuracies.iter().copied().filter(|(r, _)| *r > round).collect()
    }

    pub fn latest(&self) -> Option<f64> {
        self.accuracies.last().map(|(_, a)| *a)
    }
}

/// Distinct classes covered by a set of profiles.
pub(crate) fn covered_classes<'a>(profiles: impl IntoIterator<Item = &'a DataProfile>) -> BTreeSet<u32> {
    profiles.into_iter().flat_map(|p| p.classes()).collect()
}
