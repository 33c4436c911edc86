use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{covered_classes, mix_seed, Learner, LearningError, ModelVector, TrainingParams};
use crate::topology::{DataProfile, NodeId};

fn default_total_classes() -> u32 {
    10
}

/// Accuracy curve `a + b ln(r)` shifted by the participating data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCurveParams {
    pub base_offset: f64,
    pub log_gain: f64,
    pub data_volume_gain: f64,
    pub coverage_gain: f64,
    pub noise_std: f64,
    #[serde(default = "default_total_classes")]
    pub total_classes: u32,
    #[serde(default)]
    pub seed: u64,
}

/// `clamp(a + b ln r + g_v ln(samples) + g_c coverage + noise, 0, 1)` where
/// coverage is the fraction of all classes held by some participant. The
/// noise draw depends only on `(seed, round)`.
pub fn synthetic_accuracy(params: &SyntheticCurveParams, round: u32, active_profiles: &[&DataProfile]) -> f64 {
    let round = round.max(1);
    let samples: u64 = active_profiles.iter().map(|p| p.total_samples()).sum();
    let volume = if samples > 0 { (samples as f64).ln() } else { 0.0 };
    let coverage = if params.total_classes > 0 {
        covered_classes(active_profiles.iter().copied()).len() as f64 / f64::from(params.total_classes)
    } else {
        0.0
    };
    let noise = if params.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.seed, u64::from(round)]));
        Normal::new(0.0, params.noise_std)
            .map(|d| d.sample(&mut rng))
            .unwrap_or(0.0)
    } else {
        0.0
    };
    let acc = params.base_offset
        + params.log_gain * f64::from(round).ln()
        + params.data_volume_gain * volume
        + params.coverage_gain * coverage
        + noise;
    acc.clamp(0.0, 1.0)
}

/// Learner whose accuracy comes from [`synthetic_accuracy`]; weights are
/// carried through unchanged.
#[derive(Debug, Clone)]
pub struct SyntheticCurve {
    params: SyntheticCurveParams,
}

impl SyntheticCurve {
    pub fn new(params: SyntheticCurveParams) -> Self {
        SyntheticCurve { params }
    }
}

impl Learner for SyntheticCurve {
    fn initial_model(&self) -> ModelVector {
        ModelVector::zeros(1)
    }

    fn train_local(
        &self,
        _client: &NodeId,
        model: &ModelVector,
        _profile: &DataProfile,
        _params: &TrainingParams,
        _step_seed: u64,
    ) -> Result<ModelVector, LearningError> {
        Ok(model.clone())
    }

    fn evaluate(&self, _model: &ModelVector, round: u32, participants: &[&DataProfile]) -> Result<f64, LearningError> {
        Ok(synthetic_accuracy(&self.params, round, participants))
    }
}
