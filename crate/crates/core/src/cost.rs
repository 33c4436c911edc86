//! Communication cost model.
//!
//! Sizes are in MB and link costs in units per MB, so every product below
//! is in abstract cost units. A size given in bits converts with
//! `bits / 8e6`; link costs per bit convert the other way.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{validate_configuration, ChangeItem, ChangeKind, ChangeSet, HflConfiguration};
use crate::topology::{NodeId, Topology, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("change for `{0}` has no parent aggregator")]
    MissingParent(NodeId),
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfiguration(Vec<String>),
    #[error("per-round cost must be positive, got {0}")]
    NonPositivePerRoundCost(f64),
    #[error("negative charge {0}")]
    NegativeCharge(f64),
    #[error("charge at round {round} precedes last entry at round {last}")]
    MonotonicityViolation { round: u32, last: u32 },
    #[error("cost parameters must be positive and finite")]
    InvalidParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// S_svc, MB.
    pub service_artifact_size: f64,
    /// M, MB.
    pub model_size: f64,
    /// S_mu, MB.
    pub model_update_size: f64,
}

impl CostParams {
    /// Model updates the same size as the model.
    pub fn new(service_artifact_size: f64, model_size: f64) -> Self {
        CostParams {
            service_artifact_size,
            model_size,
            model_update_size: model_size,
        }
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let ok = [self.service_artifact_size, self.model_size, self.model_update_size]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(CostError::InvalidParams)
        }
    }
}

/// The (Ψ_rc, Ψ_pr) pair describing one reconfiguration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconfigurationCost {
    pub change_cost: f64,
    pub post_cost_delta: f64,
}

impl ReconfigurationCost {
    pub fn between(
        orig: &HflConfiguration,
        new: &HflConfiguration,
        changes: &ChangeSet,
        topology: &Topology,
        params: &CostParams,
    ) -> Result<Self, CostError> {
        Ok(ReconfigurationCost {
            change_cost: change_set_cost(changes, topology, params)?,
            post_cost_delta: post_reconfiguration_cost(orig, new, topology, params)?,
        })
    }
}

/// Artifact download from the artifact server (skipped when the node
/// already holds the artifacts) plus model download from the parent.
/// Removals are free.
pub fn change_item_cost(
    item: &ChangeItem,
    topology: &Topology,
    params: &CostParams,
) -> Result<f64, CostError> {
    if matches!(item.kind, ChangeKind::ClientRemoved | ChangeKind::AggregatorRemoved) {
        return Ok(0.0);
    }
    let node = topology
        .node(&item.node)
        .ok_or_else(|| TopologyError::UnknownNode(item.node.clone()))?;
    let parent = item
        .new_parent
        .as_ref()
        .ok_or_else(|| CostError::MissingParent(item.node.clone()))?;
    let to_artifacts = if node.has_service_artifacts {
        0.0
    } else {
        topology.link_cost_between(&item.node, topology.artifact_server())?
    };
    let to_parent = topology.link_cost_between(&item.node, parent)?;
    Ok(params.service_artifact_size * to_artifacts + params.model_size * to_parent)
}

pub fn change_set_cost(
    changes: &ChangeSet,
    topology: &Topology,
    params: &CostParams,
) -> Result<f64, CostError> {
    let mut sum = CompensatedSum::default();
    for item in changes.iter() {
        sum.add(change_item_cost(item, topology, params)?);
    }
    Ok(sum.value())
}

/// Ψ_ga and Ψ_la of one global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundCost {
    pub global: f64,
    pub local: f64,
}

impl RoundCost {
    pub fn total(&self) -> f64 {
        self.global + self.local
    }
}

pub fn round_cost_breakdown(
    config: &HflConfiguration,
    topology: &Topology,
    params: &CostParams,
) -> Result<RoundCost, CostError> {
    let violations = validate_configuration(config, topology);
    if !violations.is_empty() {
        return Err(CostError::InvalidConfiguration(violations));
    }
    let mut global = CompensatedSum::default();
    let mut local = CompensatedSum::default();
    for (la, clients) in &config.clusters {
        global.add(topology.link_cost_between(la, &config.ga)? * params.model_update_size);
        for c in clients {
            local.add(topology.link_cost_between(c, la)? * params.model_update_size);
        }
    }
    Ok(RoundCost {
        global: global.value(),
        local: f64::from(config.frequency.local_rounds) * local.value(),
    })
}

/// Ψ_gr: one global aggregation plus L local aggregations.
pub fn per_round_cost(
    config: &HflConfiguration,
    topology: &Topology,
    params: &CostParams,
) -> Result<f64, CostError> {
    round_cost_breakdown(config, topology, params).map(|c| c.total())
}

/// Signed change in per-round cost; negative means the new configuration
/// is cheaper to run.
pub fn post_reconfiguration_cost(
    orig: &HflConfiguration,
    new: &HflConfiguration,
    topology: &Topology,
    params: &CostParams,
) -> Result<f64, CostError> {
    Ok(per_round_cost(new, topology, params)? - per_round_cost(orig, topology, params)?)
}

/// Predicted round at which the budget runs out:
/// `current_round + (remaining_budget - revert_change_cost) / per_round`.
///
/// Pass `revert_change_cost = 0` for a configuration that stays deployed.
/// Clamped to `current_round` when the budget cannot even fund the revert.
/// A quotient within a few ulps of an integer is snapped to it, so that
/// `floor` of the result counts whole affordable rounds.
pub fn final_round(
    current_round: u32,
    remaining_budget: f64,
    revert_change_cost: f64,
    per_round: f64,
) -> Result<f64, CostError> {
    if per_round.is_nan() || per_round <= 0.0 {
        return Err(CostError::NonPositivePerRoundCost(per_round));
    }
    let funded = remaining_budget - revert_change_cost;
    let r = f64::from(current_round);
    if funded < 0.0 {
        return Ok(r);
    }
    let q = funded / per_round;
    let nearest = q.round();
    let q = if (q - nearest).abs() <= 16.0 * f64::EPSILON * q.abs().max(1.0) {
        nearest
    } else {
        q
    };
    Ok(r + q)
}

/// Neumaier summation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: u32,
    pub label: String,
    pub amount: f64,
    /// Running total after this entry.
    pub total: f64,
}

/// Append-only record of every cost charged against the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    budget: f64,
    entries: Vec<LedgerEntry>,
    total: CompensatedSum,
}

impl CostLedger {
    pub fn new(budget: f64) -> Self {
        CostLedger {
            budget,
            entries: Vec::new(),
            total: CompensatedSum::default(),
        }
    }

    pub fn charge(&mut self, round: u32, label: impl Into<String>, amount: f64) -> Result<(), CostError> {
        if !amount.is_finite() || amount < 0.0 {
            return Err(CostError::NegativeCharge(amount));
        }
        if let Some(last) = self.entries.last() {
            if round < last.round {
                return Err(CostError::MonotonicityViolation {
                    round,
                    last: last.round,
                });
            }
        }
        self.total.add(amount);
        self.entries.push(LedgerEntry {
            round,
            label: label.into(),
            amount,
            total: self.total.value(),
        });
        Ok(())
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn total_cost(&self) -> f64 {
        self.total.value()
    }

    pub fn remaining(&self) -> f64 {
        self.budget - self.total_cost()
    }

    pub fn can_afford(&self, amount: f64) -> bool {
        self.total_cost() + amount <= self.budget
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// `round,label,amount,total`
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for e in &self.entries {
            out.serialize(e)?;
        }
        if self.entries.is_empty() {
            out.write_record(["round", "label", "amount", "total"])?;
        }
        out.flush()?;
        Ok(())
    }
}
