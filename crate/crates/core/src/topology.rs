//! Infrastructure graph: nodes with roles and capabilities, plus pairwise
//! communication link costs in units per MB.
//!
//! A [`Topology`] is an immutable value. Every mutating operation returns a
//! new topology, so snapshots can be shared freely between the simulator,
//! the orchestrator and report writers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("node `{0}` already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("the artifact server `{0}` cannot be removed")]
    CannotRemoveArtifactServer(NodeId),
    #[error("invalid node `{id}`: {reason}")]
    InvalidNode { id: NodeId, reason: String },
    #[error("invalid link cost {cost} between `{a}` and `{b}`")]
    InvalidLinkCost { a: NodeId, b: NodeId, cost: f64 },
}

/// Identifier of a node, unique within one topology.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

/// Per-class sample counts held by a trainable node.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DataProfile {
    pub class_counts: BTreeMap<u32, u64>,
}

impl DataProfile {
    pub fn new(class_counts: BTreeMap<u32, u64>) -> Self {
        DataProfile { class_counts }
    }

    /// Equal number of samples for each listed class.
    pub fn uniform(classes: &[u32], samples_per_class: u64) -> Self {
        DataProfile {
            class_counts: classes.iter().map(|&c| (c, samples_per_class)).collect(),
        }
    }

    pub fn total_samples(&self) -> u64 {
        self.class_counts.values().sum()
    }

    /// Classes with at least one sample.
    pub fn classes(&self) -> impl Iterator<Item = u32> + '_ {
        self.class_counts
            .iter()
            .filter(|(_, &n)| n > 0)
            .map(|(&c, _)| c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: NodeId,
    pub can_train: bool,
    pub can_aggregate: bool,
    pub has_service_artifacts: bool,
    pub data_profile: Option<DataProfile>,
}

impl NodeSpec {
    pub fn client(id: impl Into<String>, profile: DataProfile) -> Self {
        NodeSpec {
            id: NodeId::new(id),
            can_train: true,
            can_aggregate: false,
            has_service_artifacts: false,
            data_profile: Some(profile),
        }
    }

    pub fn aggregator(id: impl Into<String>) -> Self {
        NodeSpec {
            id: NodeId::new(id),
            can_train: false,
            can_aggregate: true,
            has_service_artifacts: false,
            data_profile: None,
        }
    }

    pub fn with_artifacts(mut self, present: bool) -> Self {
        self.has_service_artifacts = present;
        self
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        let invalid = |reason: &str| TopologyError::InvalidNode {
            id: self.id.clone(),
            reason: reason.to_owned(),
        };
        if self.id.as_str().is_empty() {
            return Err(invalid("empty id"));
        }
        if !self.can_train && !self.can_aggregate {
            return Err(invalid("node must be able to train or aggregate"));
        }
        match (&self.data_profile, self.can_train) {
            (Some(_), false) => return Err(invalid("data profile on a node that cannot train")),
            (None, true) => return Err(invalid("trainable node without a data profile")),
            (Some(p), true) if p.total_samples() == 0 => {
                return Err(invalid("data profile holds no samples"))
            }
            _ => {}
        }
        Ok(())
    }
}

fn ordered_pair(a: &NodeId, b: &NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a.clone(), b.clone())
    } else {
        (b.clone(), a.clone())
    }
}

fn check_cost(a: &NodeId, b: &NodeId, cost: f64) -> Result<(), TopologyError> {
    if cost.is_finite() && cost >= 0.0 {
        Ok(())
    } else {
        Err(TopologyError::InvalidLinkCost {
            a: a.clone(),
            b: b.clone(),
            cost,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    nodes: BTreeMap<NodeId, NodeSpec>,
    // keyed by (min, max) so that lookups are symmetric
    links: BTreeMap<(NodeId, NodeId), f64>,
    default_link_cost: f64,
    artifact_server: NodeId,
    ga_candidate: NodeId,
}

impl Topology {
    pub fn new(
        nodes: Vec<NodeSpec>,
        links: Vec<(NodeId, NodeId, f64)>,
        default_link_cost: f64,
        artifact_server: NodeId,
        ga_candidate: NodeId,
    ) -> Result<Self, TopologyError> {
        let mut map = BTreeMap::new();
        for spec in nodes {
            spec.validate()?;
            if map.contains_key(&spec.id) {
                return Err(TopologyError::DuplicateNode(spec.id));
            }
            map.insert(spec.id.clone(), spec);
        }
        check_cost(&artifact_server, &ga_candidate, default_link_cost)?;
        for id in [&artifact_server, &ga_candidate] {
            if !map.contains_key(id) {
                return Err(TopologyError::UnknownNode(id.clone()));
            }
        }
        let mut topo = Topology {
            nodes: map,
            links: BTreeMap::new(),
            default_link_cost,
            artifact_server,
            ga_candidate,
        };
        for (a, b, cost) in links {
            topo.insert_link(&a, &b, cost)?;
        }
        Ok(topo)
    }

    fn insert_link(&mut self, a: &NodeId, b: &NodeId, cost: f64) -> Result<(), TopologyError> {
        for id in [a, b] {
            if !self.nodes.contains_key(id) {
                return Err(TopologyError::UnknownNode(id.clone()));
            }
        }
        check_cost(a, b, cost)?;
        if a != b {
            self.links.insert(ordered_pair(a, b), cost);
        }
        Ok(())
    }

    pub fn add_node(
        &self,
        spec: NodeSpec,
        links: &BTreeMap<NodeId, f64>,
    ) -> Result<Topology, TopologyError> {
        spec.validate()?;
        if self.nodes.contains_key(&spec.id) {
            return Err(TopologyError::DuplicateNode(spec.id));
        }
        if let Some(target) = links.keys().find(|t| !self.nodes.contains_key(*t)) {
            return Err(TopologyError::UnknownNode(target.clone()));
        }
        let mut next = self.clone();
        let id = spec.id.clone();
        next.nodes.insert(id.clone(), spec);
        for (target, &cost) in links {
            next.insert_link(&id, target, cost)?;
        }
        Ok(next)
    }

    pub fn remove_node(&self, id: &NodeId) -> Result<Topology, TopologyError> {
        if !self.nodes.contains_key(id) {
            return Err(TopologyError::UnknownNode(id.clone()));
        }
        if *id == self.artifact_server {
            return Err(TopologyError::CannotRemoveArtifactServer(id.clone()));
        }
        let mut next = self.clone();
        next.nodes.remove(id);
        next.links.retain(|(a, b), _| a != id && b != id);
        Ok(next)
    }

    pub fn with_link_cost(&self, a: &NodeId, b: &NodeId, cost: f64) -> Result<Topology, TopologyError> {
        let mut next = self.clone();
        next.insert_link(a, b, cost)?;
        Ok(next)
    }

    /// Marks the service artifacts as downloaded on `id`. Permanent.
    pub fn with_artifacts_on(&self, id: &NodeId) -> Result<Topology, TopologyError> {
        let mut next = self.clone();
        next.nodes
            .get_mut(id)
            .ok_or_else(|| TopologyError::UnknownNode(id.clone()))?
            .has_service_artifacts = true;
        Ok(next)
    }

    /// Symmetric link cost in units per MB; zero on the diagonal and the
    /// configured default for pairs without an explicit link.
    pub fn link_cost_between(&self, a: &NodeId, b: &NodeId) -> Result<f64, TopologyError> {
        for id in [a, b] {
            if !self.nodes.contains_key(id) {
                return Err(TopologyError::UnknownNode(id.clone()));
            }
        }
        if a == b {
            return Ok(0.0);
        }
        Ok(self
            .links
            .get(&ordered_pair(a, b))
            .copied()
            .unwrap_or(self.default_link_cost))
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeSpec> {
        self.nodes.get(id)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeSpec> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> BTreeSet<NodeId> {
        self.nodes.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes other than the artifact server and the GA candidate.
    pub fn worker_count(&self) -> usize {
        self.nodes
            .keys()
            .filter(|id| **id != self.artifact_server && **id != self.ga_candidate)
            .count()
    }

    /// Explicitly stored links, each pair once.
    pub fn links(&self) -> impl Iterator<Item = (&NodeId, &NodeId, f64)> {
        self.links.iter().map(|((a, b), &c)| (a, b, c))
    }

    pub fn default_link_cost(&self) -> f64 {
        self.default_link_cost
    }

    pub fn artifact_server(&self) -> &NodeId {
        &self.artifact_server
    }

    pub fn ga_candidate(&self) -> &NodeId {
        &self.ga_candidate
    }
}
