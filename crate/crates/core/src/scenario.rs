//! Scenario files: a TOML description of the infrastructure, the event
//! schedule, orchestrator settings, cost parameters, training parameters
//! and the learner.
//!
//! [`load_scenario`] parses, resolves defaults and validates the whole file,
//! reporting every violation at once. [`Scenario::to_toml`] echoes the
//! resolved scenario; loading the echo yields an identical [`Scenario`].

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{AggregationFrequency, StrategyRegistry};
use crate::learning::{LearnerKind, TrainingParams};
use crate::cost::CostParams;
use crate::rva::OrchestratorSettings;
use crate::simkit::{Event, EventKind};
use crate::topology::{DataProfile, NodeId, NodeSpec, Topology};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
}

/// Stop early once accuracy reaches `threshold` or stalls for `patience`
/// rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceRule {
    pub threshold: Option<f64>,
    pub patience: u32,
}

/// A fully resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub horizon: u32,
    pub topology: Topology,
    pub events: Vec<Event>,
    pub settings: OrchestratorSettings,
    pub cost_params: CostParams,
    pub training: TrainingParams,
    pub learner: LearnerKind,
    pub convergence: Option<ConvergenceRule>,
}

// ---- file layout ----

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    seed: u64,
    horizon: u32,
    topology: TopologyFile,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<EventFile>,
    orchestrator: OrchestratorSettings,
    cost: CostFile,
    training: TrainingFile,
    learner: LearnerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stop: Option<ConvergenceRule>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    default_link_cost: Option<f64>,
    artifact_server: NodeId,
    ga_candidate: NodeId,
    nodes: Vec<NodeFile>,
    #[serde(default)]
    links: Vec<LinkFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: NodeId,
    #[serde(default)]
    can_train: bool,
    #[serde(default)]
    can_aggregate: bool,
    #[serde(default)]
    has_service_artifacts: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data: Option<DataFile>,
}

/// Either `classes` + `samples_per_class`, or explicit
/// `class_counts = [[class, count], ...]`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    classes: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    samples_per_class: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_counts: Option<Vec<(u32, u64)>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    a: NodeId,
    b: NodeId,
    cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JoinLinkFile {
    to: NodeId,
    cost: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EventKindFile {
    NodeJoined {
        node: NodeFile,
        #[serde(default)]
        links: Vec<JoinLinkFile>,
    },
    NodeLeft {
        id: NodeId,
    },
    LinkCostChanged {
        a: NodeId,
        b: NodeId,
        cost: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EventFile {
    at_round: u32,
    #[serde(flatten)]
    kind: EventKindFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostFile {
    service_artifact_size: f64,
    model_size: f64,
    /// Defaults to `model_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model_update_size: Option<f64>,
}

fn default_learning_rate() -> f64 {
    0.1
}
fn default_batch_size() -> u32 {
    32
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainingFile {
    local_epochs: u32,
    local_rounds: u32,
    #[serde(default = "default_learning_rate")]
    learning_rate: f64,
    #[serde(default = "default_batch_size")]
    batch_size: u32,
}

// ---- file -> scenario ----

fn node_from_file(file: &NodeFile, where_: &str, errors: &mut Vec<String>) -> NodeSpec {
    let data_profile = file.data.as_ref().and_then(|d| match (&d.classes, d.samples_per_class, &d.class_counts) {
        (Some(classes), Some(n), None) => Some(DataProfile::uniform(classes, n)),
        (None, None, Some(counts)) => {
            let mut map = BTreeMap::new();
            for (c, n) in counts {
                if map.insert(*c, *n).is_some() {
                    errors.push(format!("{where_}.data.class_counts: class {c} listed twice"));
                }
            }
            Some(DataProfile::new(map))
        }
        _ => {
            errors.push(format!(
                "{where_}.data: give either `classes` and `samples_per_class`, or `class_counts`"
            ));
            None
        }
    });
    NodeSpec {
        id: file.id.clone(),
        can_train: file.can_train,
        can_aggregate: file.can_aggregate,
        has_service_artifacts: file.has_service_artifacts,
        data_profile,
    }
}

fn node_to_file(spec: &NodeSpec) -> NodeFile {
    let data = spec.data_profile.as_ref().map(|p| {
        let counts: Vec<u64> = p.class_counts.values().copied().collect();
        match counts.first() {
            Some(&n) if counts.iter().all(|c| *c == n) => DataFile {
                classes: Some(p.class_counts.keys().copied().collect()),
                samples_per_class: Some(n),
                class_counts: None,
            },
            _ => DataFile {
                class_counts: Some(p.class_counts.iter().map(|(c, n)| (*c, *n)).collect()),
                ..DataFile::default()
            },
        }
    });
    NodeFile {
        id: spec.id.clone(),
        can_train: spec.can_train,
        can_aggregate: spec.can_aggregate,
        has_service_artifacts: spec.has_service_artifacts,
        data,
    }
}

fn resolve(file: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let mut errors = Vec::new();

    let default_link_cost = file.topology.default_link_cost.unwrap_or_else(|| {
        errors.push("topology.default_link_cost: missing required field".to_owned());
        f64::NAN
    });
    let nodes: Vec<NodeSpec> = file
        .topology
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| node_from_file(n, &format!("topology.nodes[{i}]"), &mut errors))
        .collect();
    let links = file
        .topology
        .links
        .iter()
        .map(|l| (l.a.clone(), l.b.clone(), l.cost))
        .collect();
    let topology = if default_link_cost.is_nan() {
        None
    } else {
        match Topology::new(
            nodes,
            links,
            default_link_cost,
            file.topology.artifact_server.clone(),
            file.topology.ga_candidate.clone(),
        ) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("topology: {e}"));
                None
            }
        }
    };

    let events: Vec<Event> = file
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| Event {
            at_round: e.at_round,
            kind: match &e.kind {
                EventKindFile::NodeJoined { node, links } => EventKind::NodeJoined {
                    node: node_from_file(node, &format!("events[{i}].node"), &mut errors),
                    links: links.iter().map(|l| (l.to.clone(), l.cost)).collect(),
                },
                EventKindFile::NodeLeft { id } => EventKind::NodeLeft { id: id.clone() },
                EventKindFile::LinkCostChanged { a, b, cost } => EventKind::LinkCostChanged {
                    a: a.clone(),
                    b: b.clone(),
                    cost: *cost,
                },
            },
        })
        .collect();

    let Some(topology) = topology else {
        return Err(ScenarioError::Validation(errors));
    };

    let mut learner = file.learner;
    learner.set_seed(file.seed);
    let scenario = Scenario {
        name: file.name,
        seed: file.seed,
        horizon: file.horizon,
        topology,
        events,
        settings: file.orchestrator,
        cost_params: CostParams {
            service_artifact_size: file.cost.service_artifact_size,
            model_size: file.cost.model_size,
            model_update_size: file.cost.model_update_size.unwrap_or(file.cost.model_size),
        },
        training: TrainingParams {
            local_epochs: file.training.local_epochs,
            local_rounds: file.training.local_rounds,
            learning_rate: file.training.learning_rate,
            batch_size: file.training.batch_size,
            seed: file.seed,
        },
        learner,
        convergence: file.stop,
    };
    errors.extend(scenario.violations());
    if errors.is_empty() {
        Ok(scenario)
    } else {
        Err(ScenarioError::Validation(errors))
    }
}

impl Scenario {
    pub fn frequency(&self) -> AggregationFrequency {
        AggregationFrequency::new(self.training.local_epochs, self.training.local_rounds)
    }

    /// Same scenario under another seed; learner and training seeds follow.
    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.seed = seed;
        s.training.seed = seed;
        s.learner.set_seed(seed);
        s
    }

    /// Every violated invariant, empty when the scenario can run.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.name.trim().is_empty() {
            v.push("name: must not be empty".to_owned());
        }
        if self.horizon < 1 {
            v.push("horizon: must be >= 1".to_owned());
        }
        v.extend(self.settings.violations());
        if !StrategyRegistry::default().contains(&self.settings.strategy) {
            v.push(format!("orchestrator.strategy: unknown strategy `{}`", self.settings.strategy));
        }
        if self.cost_params.validate().is_err() {
            v.push("cost: sizes must be positive and finite".to_owned());
        }
        if self.training.local_epochs < 1 {
            v.push("training.local_epochs: must be >= 1".to_owned());
        }
        if self.training.local_rounds < 1 {
            v.push("training.local_rounds: must be >= 1".to_owned());
        }
        if !(self.training.learning_rate.is_finite() && self.training.learning_rate > 0.0) {
            v.push("training.learning_rate: must be positive".to_owned());
        }
        if self.training.batch_size < 1 {
            v.push("training.batch_size: must be >= 1".to_owned());
        }
        match &self.learner {
            LearnerKind::SyntheticCurve(p) => {
                if !(p.noise_std.is_finite() && p.noise_std >= 0.0) {
                    v.push("learner.noise_std: must be >= 0".to_owned());
                }
                if p.total_classes < 1 {
                    v.push("learner.total_classes: must be >= 1".to_owned());
                }
            }
            LearnerKind::LinearClassifier(spec) => {
                if spec.num_classes < 2 || spec.dimension < 1 || spec.eval_samples_per_class < 1 {
                    v.push("learner: linear classifier needs >= 2 classes, dimension >= 1 and evaluation samples".to_owned());
                }
                if !(spec.cluster_std.is_finite() && spec.cluster_std > 0.0) {
                    v.push("learner.cluster_std: must be positive".to_owned());
                }
                let all = self.topology.nodes().filter_map(|n| n.data_profile.as_ref()).chain(
                    self.events.iter().filter_map(|e| match &e.kind {
                        EventKind::NodeJoined { node, .. } => node.data_profile.as_ref(),
                        _ => None,
                    }),
                );
                if all.flat_map(|p| p.classes()).any(|c| c >= spec.num_classes) {
                    v.push("learner.num_classes: a data profile holds a class outside the task".to_owned());
                }
            }
        }
        if let Some(rule) = &self.convergence {
            if rule.patience < 1 {
                v.push("stop.patience: must be >= 1".to_owned());
            }
        }
        let frequency = self.frequency();
        if frequency.is_valid() && StrategyRegistry::default().contains(&self.settings.strategy) {
            if let Err(e) = crate::config::calc_best_fit_config(
                &self.topology,
                &self.settings.strategy,
                frequency,
                self.settings.la_count,
            ) {
                v.push(format!("topology: no initial configuration: {e}"));
            }
        }

        // replay the schedule so that every event refers to a live node
        let mut order: Vec<&Event> = self.events.iter().collect();
        order.sort_by_key(|e| e.at_round);
        let mut topo = self.topology.clone();
        for (i, e) in order.iter().enumerate() {
            if e.at_round < 1 || e.at_round > self.horizon {
                v.push(format!(
                    "events[{i}] ({}): at_round {} outside 1..={}",
                    e.label(),
                    e.at_round,
                    self.horizon
                ));
            }
            let next = match &e.kind {
                EventKind::NodeJoined { node, links } => topo.add_node(node.clone(), links),
                EventKind::NodeLeft { id } => {
                    if *id == *topo.ga_candidate() {
                        v.push(format!("events[{i}] ({}): the global aggregator cannot leave", e.label()));
                    }
                    topo.remove_node(id)
                }
                EventKind::LinkCostChanged { a, b, cost } => topo.with_link_cost(a, b, *cost),
            };
            match next {
                Ok(t) => topo = t,
                Err(err) => v.push(format!("events[{i}] ({}): {err}", e.label())),
            }
        }
        v
    }

    /// The resolved scenario in file form, with every default spelled out.
    pub fn to_toml(&self) -> String {
        let mut links: Vec<LinkFile> = self
            .topology
            .links()
            .map(|(a, b, cost)| LinkFile { a: a.clone(), b: b.clone(), cost })
            .collect();
        links.sort_by(|x, y| (&x.a, &x.b).cmp(&(&y.a, &y.b)));
        let file = ScenarioFile {
            name: self.name.clone(),
            seed: self.seed,
            horizon: self.horizon,
            topology: TopologyFile {
                default_link_cost: Some(self.topology.default_link_cost()),
                artifact_server: self.topology.artifact_server().clone(),
                ga_candidate: self.topology.ga_candidate().clone(),
                nodes: self.topology.nodes().map(node_to_file).collect(),
                links,
            },
            events: self
                .events
                .iter()
                .map(|e| EventFile {
                    at_round: e.at_round,
                    kind: match &e.kind {
                        EventKind::NodeJoined { node, links } => EventKindFile::NodeJoined {
                            node: node_to_file(node),
                            links: links
                                .iter()
                                .map(|(to, cost)| JoinLinkFile { to: to.clone(), cost: *cost })
                                .collect(),
                        },
                        EventKind::NodeLeft { id } => EventKindFile::NodeLeft { id: id.clone() },
                        EventKind::LinkCostChanged { a, b, cost } => EventKindFile::LinkCostChanged {
                            a: a.clone(),
                            b: b.clone(),
                            cost: *cost,
                        },
                    },
                })
                .collect(),
            orchestrator: self.settings.clone(),
            cost: CostFile {
                service_artifact_size: self.cost_params.service_artifact_size,
                model_size: self.cost_params.model_size,
                model_update_size: Some(self.cost_params.model_update_size),
            },
            training: TrainingFile {
                local_epochs: self.training.local_epochs,
                local_rounds: self.training.local_rounds,
                learning_rate: self.training.learning_rate,
                batch_size: self.training.batch_size,
            },
            learner: self.learner.clone(),
            stop: self.convergence,
        };
        toml::to_string(&file).expect("scenario serializes to TOML")
    }
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
    resolve(file)
}

/// Loads a scenario file. A bare name such as `scenario_1a` that is not an
/// existing path is looked up as `scenarios/<name>.toml`.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = resolve_path(path.as_ref());
    let text = fs::read_to_string(&path).map_err(|source| ScenarioError::Io { path: path.clone(), source })?;
    parse_scenario(&text)
}

pub fn resolve_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    let candidate = Path::new("scenarios").join(path).with_extension("toml");
    if candidate.exists() {
        candidate
    } else {
        path.to_path_buf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rva::RegressionKind;

    pub(crate) const MINIMAL: &str = r#"
name = "mini"
seed = 1
horizon = 20

[topology]
default_link_cost = 10.0
artifact_server = "GA"
ga_candidate = "GA"
nodes = [
  { id = "GA", can_aggregate = true, has_service_artifacts = true },
  { id = "LA1", can_aggregate = true, has_service_artifacts = true },
  { id = "C1", can_train = true, has_service_artifacts = true, data = { classes = [0, 1], samples_per_class = 10 } },
  { id = "C2", can_train = true, has_service_artifacts = true, data = { class_counts = [[2, 5], [3, 7]] } },
]
links = [{ a = "GA", b = "LA1", cost = 4.0 }]

[[events]]
at_round = 3
kind = "node_joined"
node = { id = "C3", can_train = true, data = { classes = [4], samples_per_class = 3 } }
links = [{ to = "LA1", cost = 2.0 }]

[[events]]
at_round = 9
kind = "node_left"
id = "C1"

[orchestrator]
validation_window = 3
strategy = "minCommCost"
la_count = 1
budget = 5000.0

[cost]
service_artifact_size = 2.0
model_size = 1.0

[training]
local_epochs = 1
local_rounds = 2

[learner]
kind = "synthetic_curve"
base_offset = 0.1
log_gain = 0.05
data_volume_gain = 0.0
coverage_gain = 0.1
noise_std = 0.0
"#;

    #[test]
    fn loads_and_resolves_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.settings.regression, RegressionKind::Logarithmic);
        assert_eq!(s.cost_params.model_update_size, 1.0);
        assert_eq!(s.training.batch_size, 32);
        assert_eq!(s.training.seed, 1);
        assert_eq!(s.events.len(), 2);
        let c2 = s.topology.node(&NodeId::from("C2")).unwrap();
        assert_eq!(c2.data_profile.as_ref().unwrap().total_samples(), 12);
    }

    #[test]
    fn echo_round_trips() {
        let s = parse_scenario(MINIMAL).unwrap();
        let echoed = s.to_toml();
        assert_eq!(parse_scenario(&echoed).unwrap(), s);
    }

    #[test]
    fn missing_default_link_cost_is_named() {
        let text = MINIMAL.replace("default_link_cost = 10.0\n", "");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation(v)) => {
                assert!(v.iter().any(|m| m.contains("default_link_cost")), "{v:?}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn short_window_with_log_fit_is_rejected() {
        let text = MINIMAL.replace("validation_window = 3", "validation_window = 1");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation(v)) => assert!(v.iter().any(|m| m.contains("validation_window"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn all_violations_are_reported() {
        let text = MINIMAL
            .replace("at_round = 9", "at_round = 99")
            .replace("budget = 5000.0", "budget = -1.0")
            .replace("local_rounds = 2", "local_rounds = 0");
        match parse_scenario(&text) {
            Err(ScenarioError::Validation(v)) => assert!(v.len() >= 3, "{v:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn syntax_errors_carry_position() {
        let text = MINIMAL.replace("horizon = 20", "horizon = ");
        match parse_scenario(&text) {
            Err(ScenarioError::Parse(m)) => assert!(m.contains("line"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn seed_override_reaches_learner() {
        let s = parse_scenario(MINIMAL).unwrap().with_seed(77);
        assert_eq!(s.training.seed, 77);
        match &s.learner {
            LearnerKind::SyntheticCurve(p) => assert_eq!(p.seed, 77),
            LearnerKind::LinearClassifier(_) => unreachable!(),
        }
    }
}
