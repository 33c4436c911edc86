//! HFL pipeline configurations, best-fit configuration strategies, and the
//! change set between two configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::{NodeId, Topology, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("need {needed} aggregation-capable nodes besides the GA, found {available}")]
    InsufficientAggregators { needed: usize, available: usize },
    #[error("topology has no trainable nodes")]
    NoTrainableNodes,
    #[error("unknown configuration strategy `{0}`")]
    UnknownStrategy(String),
    #[error("la_count must be at least 1")]
    ZeroAggregators,
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggregationFrequency {
    pub local_epochs: u32,
    pub local_rounds: u32,
}

impl AggregationFrequency {
    pub fn new(local_epochs: u32, local_rounds: u32) -> Self {
        AggregationFrequency {
            local_epochs,
            local_rounds,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.local_epochs >= 1 && self.local_rounds >= 1
    }
}

/// A deployable pipeline: GA placement, LA clusters and aggregation frequency.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HflConfiguration {
    pub ga: NodeId,
    pub clusters: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub frequency: AggregationFrequency,
}

impl HflConfiguration {
    pub fn clients(&self) -> impl Iterator<Item = (&NodeId, &NodeId)> {
        self.clusters
            .iter()
            .flat_map(|(la, cs)| cs.iter().map(move |c| (c, la)))
    }

    pub fn client_count(&self) -> usize {
        self.clusters.values().map(BTreeSet::len).sum()
    }

    pub fn parent_of(&self, client: &NodeId) -> Option<&NodeId> {
        self.clusters
            .iter()
            .find(|(_, cs)| cs.contains(client))
            .map(|(la, _)| la)
    }

    pub fn contains_node(&self, id: &NodeId) -> bool {
        self.ga == *id || self.clusters.contains_key(id) || self.parent_of(id).is_some()
    }

    /// Copy without `id`: a departed client is dropped from its cluster, a
    /// departed LA takes its whole cluster with it. Emptied clusters vanish.
    pub fn without_node(&self, id: &NodeId) -> HflConfiguration {
        let mut next = self.clone();
        next.clusters.remove(id);
        for cs in next.clusters.values_mut() {
            cs.remove(id);
        }
        next.clusters.retain(|_, cs| !cs.is_empty());
        next
    }

    fn role_of(&self, id: &NodeId) -> Option<Role> {
        if self.ga == *id {
            Some(Role::Global)
        } else if self.clusters.contains_key(id) {
            Some(Role::Local(self.ga.clone()))
        } else {
            self.parent_of(id).map(|la| Role::Client(la.clone()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Role {
    Global,
    Local(NodeId),
    Client(NodeId),
}

/// Returns every violated invariant; empty when the configuration is
/// deployable on `topology`.
pub fn validate_configuration(config: &HflConfiguration, topology: &Topology) -> Vec<String> {
    let mut violations = Vec::new();
    if !config.frequency.is_valid() {
        violations.push("aggregation frequency must have local_epochs >= 1 and local_rounds >= 1".into());
    }
    match topology.node(&config.ga) {
        None => violations.push(format!("GA `{}` is not in the topology", config.ga)),
        Some(n) if !n.can_aggregate => {
            violations.push(format!("GA `{}` cannot aggregate", config.ga))
        }
        _ => {}
    }
    if config.clusters.is_empty() {
        violations.push("configuration has no clusters".into());
    }
    let mut seen: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
    for (la, clients) in &config.clusters {
        if *la == config.ga {
            violations.push(format!("GA `{la}` is also an LA"));
        }
        match topology.node(la) {
            None => violations.push(format!("LA `{la}` is not in the topology")),
            Some(n) if !n.can_aggregate => violations.push(format!("LA `{la}` cannot aggregate")),
            _ => {}
        }
        if clients.is_empty() {
            violations.push(format!("cluster of LA `{la}` is empty"));
        }
        for c in clients {
            if let Some(prev) = seen.insert(c, la) {
                violations.push(format!("client `{c}` appears in clusters of `{prev}` and `{la}`"));
            }
            if *c == config.ga {
                violations.push(format!("GA `{c}` is also a client"));
            }
            if config.clusters.contains_key(c) {
                violations.push(format!("LA `{c}` is also a client"));
            }
            match topology.node(c) {
                None => violations.push(format!("client `{c}` is not in the topology")),
                Some(n) if !n.can_train => violations.push(format!("client `{c}` cannot train")),
                _ => {}
            }
        }
    }
    violations
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ChangeKind {
    ClientAssigned,
    ClientReassigned,
    ClientRemoved,
    AggregatorAdded,
    AggregatorRemoved,
}

impl fmt::Display for ChangeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ChangeKind::ClientAssigned => "client_assigned",
            ChangeKind::ClientReassigned => "client_reassigned",
            ChangeKind::ClientRemoved => "client_removed",
            ChangeKind::AggregatorAdded => "aggregator_added",
            ChangeKind::AggregatorRemoved => "aggregator_removed",
        };
        f.write_str(s)
    }
}

/// One per-node change. `new_parent` is the parent aggregator after the
/// change; a GA placement is encoded as an `AggregatorAdded` whose parent
/// is the node itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeItem {
    pub node: NodeId,
    pub kind: ChangeKind,
    pub new_parent: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ChangeSet {
    pub items: Vec<ChangeItem>,
}

impl ChangeSet {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ChangeItem> {
        self.items.iter()
    }
}

/// The change set that turns `orig` into `new`: one item per node whose
/// role or parent differs, in node-id order.
pub fn diff_configurations(orig: &HflConfiguration, new: &HflConfiguration) -> ChangeSet {
    let nodes: BTreeSet<&NodeId> = [orig, new]
        .iter()
        .flat_map(|c| {
            std::iter::once(&c.ga)
                .chain(c.clusters.keys())
                .chain(c.clusters.values().flatten())
        })
        .collect();

    let mut items = Vec::new();
    for node in nodes {
        let before = orig.role_of(node);
        let after = new.role_of(node);
        if before == after {
            continue;
        }
        let (kind, new_parent) = match (&before, after) {
            (_, Some(Role::Global)) => (ChangeKind::AggregatorAdded, Some(node.clone())),
            (_, Some(Role::Local(ga))) => (ChangeKind::AggregatorAdded, Some(ga)),
            (Some(Role::Client(_)), Some(Role::Client(la))) => {
                (ChangeKind::ClientReassigned, Some(la))
            }
            (_, Some(Role::Client(la))) => (ChangeKind::ClientAssigned, Some(la)),
            (Some(Role::Client(_)), None) => (ChangeKind::ClientRemoved, None),
            (Some(_), None) => (ChangeKind::AggregatorRemoved, None),
            (None, None) => unreachable!("node collected from one of the configurations"),
        };
        items.push(ChangeItem {
            node: node.clone(),
            kind,
            new_parent,
        });
    }
    ChangeSet { items }
}

/// Applies `changes` to `config`. `apply_changes(a, &diff(a, b)) == b` for
/// configurations that share an aggregation frequency.
pub fn apply_changes(config: &HflConfiguration, changes: &ChangeSet) -> HflConfiguration {
    let mut next = config.clone();
    let detach = |c: &mut HflConfiguration, node: &NodeId| {
        for cs in c.clusters.values_mut() {
            cs.remove(node);
        }
    };
    for item in changes.iter() {
        let node = &item.node;
        match (item.kind, &item.new_parent) {
            (ChangeKind::ClientRemoved, _) => detach(&mut next, node),
            (ChangeKind::AggregatorRemoved, _) => {
                next.clusters.remove(node);
            }
            (ChangeKind::ClientAssigned | ChangeKind::ClientReassigned, Some(la)) => {
                detach(&mut next, node);
                next.clusters.remove(node);
                next.clusters.entry(la.clone()).or_default().insert(node.clone());
            }
            (ChangeKind::AggregatorAdded, Some(parent)) if parent == node => {
                detach(&mut next, node);
                next.clusters.remove(node);
                next.ga = node.clone();
            }
            (ChangeKind::AggregatorAdded, Some(_)) => {
                detach(&mut next, node);
                next.clusters.entry(node.clone()).or_default();
            }
            // items without a parent only come from hand-built change sets
            (_, None) => {}
        }
    }
    next.clusters.retain(|_, cs| !cs.is_empty());
    next
}

/// Name of a registered configuration strategy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StrategyId(pub String);

impl StrategyId {
    pub fn min_comm_cost() -> Self {
        StrategyId(MinCommCost::NAME.to_owned())
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub trait ConfigStrategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn best_fit(
        &self,
        topology: &Topology,
        frequency: AggregationFrequency,
        la_count: usize,
    ) -> Result<HflConfiguration, ConfigError>;
}

/// Picks the `la_count` aggregation-capable nodes cheapest to reach from the
/// GA candidate, then attaches every trainable node to its cheapest LA.
/// Ties break on node id. LAs left without clients are dropped.
#[derive(Debug, Default, Clone, Copy)]
pub struct MinCommCost;

impl MinCommCost {
    pub const NAME: &'static str = "minCommCost";
}

impl ConfigStrategy for MinCommCost {
    fn name(&self) -> &'static str {
        Self::NAME
    }

    fn best_fit(
        &self,
        topology: &Topology,
        frequency: AggregationFrequency,
        la_count: usize,
    ) -> Result<HflConfiguration, ConfigError> {
        if la_count == 0 {
            return Err(ConfigError::ZeroAggregators);
        }
        let ga = topology.ga_candidate().clone();

        let mut candidates = Vec::new();
        for n in topology.nodes().filter(|n| n.can_aggregate && n.id != ga) {
            candidates.push((topology.link_cost_between(&n.id, &ga)?, n.id.clone()));
        }
        if candidates.len() < la_count {
            return Err(ConfigError::InsufficientAggregators {
                needed: la_count,
                available: candidates.len(),
            });
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        let las: Vec<NodeId> = candidates.into_iter().take(la_count).map(|(_, id)| id).collect();

        let mut clusters: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
        let clients = topology
            .nodes()
            .filter(|n| n.can_train && n.id != ga && !las.contains(&n.id));
        let mut any_client = false;
        for client in clients {
            any_client = true;
            let mut best: Option<(f64, &NodeId)> = None;
            // `las` is not id-sorted; compare ids explicitly on ties
            for la in &las {
                let cost = topology.link_cost_between(&client.id, la)?;
                let better = match best {
                    None => true,
                    Some((bc, bid)) => cost < bc || (cost == bc && la < bid),
                };
                if better {
                    best = Some((cost, la));
                }
            }
            let (_, la) = best.expect("la_count >= 1");
            clusters.entry(la.clone()).or_default().insert(client.id.clone());
        }
        if !any_client {
            return Err(ConfigError::NoTrainableNodes);
        }
        Ok(HflConfiguration {
            ga,
            clusters,
            frequency,
        })
    }
}

pub struct StrategyRegistry {
    strategies: BTreeMap<String, Box<dyn ConfigStrategy>>,
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut r = StrategyRegistry {
            strategies: BTreeMap::new(),
        };
        r.register(Box::new(MinCommCost));
        r
    }
}

impl StrategyRegistry {
    pub fn register(&mut self, strategy: Box<dyn ConfigStrategy>) {
        self.strategies.insert(strategy.name().to_owned(), strategy);
    }

    pub fn get(&self, id: &StrategyId) -> Result<&dyn ConfigStrategy, ConfigError> {
        self.strategies
            .get(&id.0)
            .map(|s| s.as_ref())
            .ok_or_else(|| ConfigError::UnknownStrategy(id.0.clone()))
    }

    pub fn contains(&self, id: &StrategyId) -> bool {
        self.strategies.contains_key(&id.0)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.strategies.keys().map(String::as_str)
    }
}

/// Runs the named strategy from the default registry.
pub fn calc_best_fit_config(
    topology: &Topology,
    strategy: &StrategyId,
    frequency: AggregationFrequency,
    la_count: usize,
) -> Result<HflConfiguration, ConfigError> {
    StrategyRegistry::default()
        .get(strategy)?
        .best_fit(topology, frequency, la_count)
}
