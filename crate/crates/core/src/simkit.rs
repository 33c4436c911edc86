//! Round-driven simulation kernel.
//!
//! Simulated time is counted in global rounds. Each round:
//!
//! 1. events due this round (and events queued behind an earlier
//!    reconfiguration) are applied to the topology and handed to the
//!    orchestrator;
//! 2. the round is refused if its per-round cost would overrun the budget;
//! 3. the pipeline trains one global round;
//! 4. the per-round cost is charged;
//! 5. due validations run, then due deployments are applied, both at the
//!    end of the round.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ChangeKind, HflConfiguration};
use crate::cost::{round_cost_breakdown, CostError, CostLedger, RoundCost};
use crate::learning::{run_global_round, LearningError, PipelineState, ProgressTrace};
use crate::rva::{
    decision_report, Decision, DeploymentRecord, EventNotice, Orchestrator, ReconfigurationOutcome, RvaError,
    RvaMode, ValidationDecision,
};
use crate::scenario::Scenario;
use crate::topology::{NodeId, NodeSpec, TopologyError};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scenario is invalid: {}", .0.join("; "))]
    ScenarioInvalid(Vec<String>),
    #[error("runs are not comparable: {0}")]
    ScenarioMismatch(String),
    #[error("round {round}: {source}")]
    Topology { round: u32, source: TopologyError },
    #[error("round {round}: {source}")]
    Orchestration { round: u32, source: RvaError },
    #[error("round {round}: {source}")]
    Cost { round: u32, source: CostError },
    #[error("round {round}: {source}")]
    Learning { round: u32, source: LearningError },
    #[error("round {round}: no clients remain in the active configuration")]
    NoActiveClients { round: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    NodeJoined {
        node: NodeSpec,
        links: BTreeMap<NodeId, f64>,
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_round: u32,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn label(&self) -> String {
        match &self.kind {
            EventKind::NodeJoined { node, .. } => format!("node_joined:{}", node.id),
            EventKind::NodeLeft { id } => format!("node_left:{id}"),
            EventKind::LinkCostChanged { a, b, .. } => format!("link_cost_changed:{a}-{b}"),
        }
    }

    pub fn notice(&self) -> EventNotice {
        EventNotice {
            label: self.label(),
            node_left: matches!(self.kind, EventKind::NodeLeft { .. }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    HorizonReached,
    Converged,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::HorizonReached => "horizon_reached",
            StopReason::Converged => "converged",
        })
    }
}

/// What happened to one batch of events.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventLogEntry {
    pub round: u32,
    pub events: String,
    pub outcome: String,
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub scenario: String,
    pub seed: u64,
    pub mode: RvaMode,
    pub ledger: CostLedger,
    pub trace: ProgressTrace,
    /// Config id active in each completed round, parallel to the trace.
    pub round_configs: Vec<usize>,
    /// Distinct configurations in order of first deployment.
    pub configs: Vec<HflConfiguration>,
    pub round_costs: Vec<RoundCost>,
    pub decisions: Vec<ValidationDecision>,
    pub deployments: Vec<DeploymentRecord>,
    pub event_log: Vec<EventLogEntry>,
    pub stop_reason: StopReason,
    /// Per-round cost of the round refused for lack of budget.
    pub refused_round_cost: Option<f64>,
}

fn config_id(configs: &mut Vec<HflConfiguration>, config: &HflConfiguration) -> usize {
    match configs.iter().position(|c| c == config) {
        Some(i) => i,
        None => {
            configs.push(config.clone());
            configs.len() - 1
        }
    }
}

/// Runs `scenario` to budget exhaustion, horizon or convergence.
pub fn run_simulation(scenario: &Scenario, mode: RvaMode) -> Result<SimulationRun, SimError> {
    let violations = scenario.violations();
    if !violations.is_empty() {
        return Err(SimError::ScenarioInvalid(violations));
    }
    let learner = scenario.learner.build();
    let params = &scenario.cost_params;
    let mut topology = scenario.topology.clone();
    let mut orch = Orchestrator::new(scenario.settings.clone(), *params, mode);
    let frequency = scenario.frequency();
    let initial = orch
        .best_fit(&topology, frequency)
        .map_err(|source| SimError::Orchestration { round: 0, source })?;
    let mut trace = ProgressTrace::new(initial);
    let mut ledger = CostLedger::new(scenario.settings.budget);
    let mut state = PipelineState::new(learner.initial_model());

    let mut events: Vec<&Event> = scenario.events.iter().collect();
    events.sort_by_key(|e| e.at_round);
    let mut next_event = 0;

    let mut run = SimulationRun {
        scenario: scenario.name.clone(),
        seed: scenario.seed,
        mode,
        ledger: CostLedger::new(scenario.settings.budget),
        trace: trace.clone(),
        round_configs: Vec::new(),
        configs: Vec::new(),
        round_costs: Vec::new(),
        decisions: Vec::new(),
        deployments: Vec::new(),
        event_log: Vec::new(),
        stop_reason: StopReason::HorizonReached,
        refused_round_cost: None,
    };
    config_id(&mut run.configs, &trace.active_config);

    for round in 1..=scenario.horizon {
        let mut notices = orch.take_queued();
        while next_event < events.len() && events[next_event].at_round == round {
            let ev = events[next_event];
            next_event += 1;
            let topo_err = |source| SimError::Topology { round, source };
            match &ev.kind {
                EventKind::NodeJoined { node, links } => {
                    topology = topology.add_node(node.clone(), links).map_err(topo_err)?;
                }
                EventKind::NodeLeft { id } => {
                    topology = topology.remove_node(id).map_err(topo_err)?;
                    trace.active_config = trace.active_config.without_node(id);
                }
                EventKind::LinkCostChanged { a, b, cost } => {
                    topology = topology.with_link_cost(a, b, *cost).map_err(topo_err)?;
                }
            }
            notices.push(ev.notice());
        }
        if trace.active_config.clusters.is_empty() {
            return Err(SimError::NoActiveClients { round });
        }
        if !notices.is_empty() {
            let label = notices.iter().map(|n| n.label.as_str()).collect::<Vec<_>>().join("+");
            let outcome = orch
                .on_events(notices, round, &topology, &trace)
                .map_err(|source| SimError::Orchestration { round, source })?;
            let outcome = match outcome {
                ReconfigurationOutcome::NoChange => "no_change".to_owned(),
                ReconfigurationOutcome::Queued => "queued".to_owned(),
                ReconfigurationOutcome::Scheduled { deploy_round, changes } => {
                    format!("deploy_at_end_of:{deploy_round} changes:{}", changes.len())
                }
            };
            info!("round {round}: {label} -> {outcome}");
            run.event_log.push(EventLogEntry { round, events: label, outcome });
        }

        let cost = round_cost_breakdown(&trace.active_config, &topology, params)
            .map_err(|source| SimError::Cost { round, source })?;
        if !ledger.can_afford(cost.total()) {
            run.stop_reason = StopReason::BudgetExhausted;
            run.refused_round_cost = Some(cost.total());
            break;
        }

        let (next, accuracy) = run_global_round(&state, &trace.active_config, &topology, &scenario.training, learner.as_ref())
            .map_err(|source| SimError::Learning { round, source })?;
        state = next;
        trace.record(round, accuracy);
        run.round_configs.push(config_id(&mut run.configs, &trace.active_config));
        run.round_costs.push(cost);
        ledger
            .charge(round, "global_round", cost.total())
            .map_err(|source| SimError::Cost { round, source })?;

        let orch_err = |source| SimError::Orchestration { round, source };
        if let Some(d) = orch.validate_due(round, &mut topology, &mut trace, &mut ledger).map_err(orch_err)? {
            info!("round {round}: validation of {} -> {}", d.event, d.decision);
            run.decisions.push(d);
        }
        if let Some(rec) = orch.deploy_due(round, &mut topology, &mut trace, &mut ledger).map_err(orch_err)? {
            info!("round {round}: deployed {} change(s) for {}", rec.changes.len(), rec.event);
            run.deployments.push(rec);
        }
        config_id(&mut run.configs, &trace.active_config);

        if let Some(rule) = &scenario.convergence {
            if convergence_check(&trace, rule.threshold, rule.patience) {
                run.stop_reason = StopReason::Converged;
                break;
            }
        }
    }

    run.ledger = ledger;
    run.trace = trace;
    Ok(run)
}

/// True once `threshold` is reached, or once the best accuracy has gone
/// `patience` rounds without improving by more than 1e-4.
pub fn convergence_check(trace: &ProgressTrace, threshold: Option<f64>, patience: u32) -> bool {
    let Some(latest) = trace.latest() else {
        return false;
    };
    if threshold.is_some_and(|t| latest >= t) {
        return true;
    }
    let mut best = f64::NEG_INFINITY;
    let mut since = 0u32;
    for (_, acc) in &trace.accuracies {
        if *acc > best + 1e-4 {
            best = *acc;
            since = 0;
        } else {
            since += 1;
        }
    }
    patience >= 1 && since >= patience
}

#[derive(Debug, Serialize)]
struct TraceRow {
    round: u32,
    accuracy: f64,
    config_id: usize,
}

#[derive(Debug, Serialize)]
struct DecisionRow<'a> {
    round: u32,
    event: &'a str,
    decision: String,
    psi_rc: f64,
    psi_gr_orig: f64,
    psi_gr_new: f64,
    r_final_orig: f64,
    r_final_new: f64,
    a_final_orig: Option<f64>,
    a_final_new: Option<f64>,
}

const DECISION_HEADER: [&str; 10] = [
    "round",
    "event",
    "decision",
    "psi_rc",
    "psi_gr_orig",
    "psi_gr_new",
    "r_final_orig",
    "r_final_new",
    "a_final_orig",
    "a_final_new",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeploymentSummary {
    pub round: u32,
    pub event: String,
    pub changes: Vec<String>,
    pub change_cost: f64,
    pub validation_round: Option<u32>,
}

/// Machine-readable outcome of one run (`summary.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub mode: RvaMode,
    pub stop_reason: StopReason,
    pub final_round: u32,
    pub final_accuracy: f64,
    pub total_cost: f64,
    pub budget: f64,
    pub initial_global_cost: f64,
    pub initial_local_cost: f64,
    pub deployments: Vec<DeploymentSummary>,
    pub decisions: Vec<String>,
    pub reverts: usize,
    pub keeps: usize,
}

impl SimulationRun {
    pub fn final_round(&self) -> u32 {
        self.trace.current_round
    }

    pub fn final_accuracy(&self) -> f64 {
        self.trace.latest().unwrap_or(0.0)
    }

    pub fn total_cost(&self) -> f64 {
        self.ledger.total_cost()
    }

    pub fn count(&self, decision: Decision) -> usize {
        self.decisions.iter().filter(|d| d.decision == decision).count()
    }

    /// Rounds in which `node` took part in training.
    pub fn rounds_with(&self, node: &NodeId) -> Vec<u32> {
        self.trace
            .accuracies
            .iter()
            .zip(&self.round_configs)
            .filter(|(_, id)| self.configs[**id].contains_node(node))
            .map(|((r, _), _)| *r)
            .collect()
    }

    pub fn summary(&self) -> RunSummary {
        let first = self.round_costs.first().copied().unwrap_or(RoundCost { global: 0.0, local: 0.0 });
        RunSummary {
            scenario: self.scenario.clone(),
            seed: self.seed,
            mode: self.mode,
            stop_reason: self.stop_reason,
            final_round: self.final_round(),
            final_accuracy: self.final_accuracy(),
            total_cost: self.total_cost(),
            budget: self.ledger.budget(),
            initial_global_cost: first.global,
            initial_local_cost: first.local,
            deployments: self
                .deployments
                .iter()
                .map(|d| DeploymentSummary {
                    round: d.round,
                    event: d.event.clone(),
                    changes: d.changes.iter().map(describe_change).collect(),
                    change_cost: d.change_cost,
                    validation_round: d.validation_round,
                })
                .collect(),
            decisions: self
                .decisions
                .iter()
                .map(|d| format!("{}:{}{}", d.round, d.decision, if d.forced { "(forced)" } else { "" }))
                .collect(),
            reverts: self.count(Decision::Revert),
            keeps: self.count(Decision::Keep),
        }
    }

    /// `round,accuracy,config_id`
    pub fn write_trace_csv<W: io::Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::Writer::from_writer(w);
        if self.trace.accuracies.is_empty() {
            out.write_record(["round", "accuracy", "config_id"])?;
        }
        for ((round, accuracy), config_id) in self.trace.accuracies.iter().zip(&self.round_configs) {
            out.serialize(TraceRow {
                round: *round,
                accuracy: *accuracy,
                config_id: *config_id,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_decisions_csv<W: io::Write>(&self, w: W) -> Result<(), SimError> {
        let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        out.write_record(DECISION_HEADER)?;
        for d in &self.decisions {
            out.serialize(DecisionRow {
                round: d.round,
                event: &d.event,
                decision: d.decision.to_string(),
                psi_rc: d.psi_rc,
                psi_gr_orig: d.psi_gr_orig,
                psi_gr_new: d.psi_gr_new,
                r_final_orig: d.r_final_orig,
                r_final_new: d.r_final_new,
                a_final_orig: d.a_final_orig,
                a_final_new: d.a_final_new,
            })?;
        }
        out.flush()?;
        Ok(())
    }

    /// Plain-text run report: events, deployments and decision reports.
    pub fn report_text(&self) -> String {
        let s = self.summary();
        let mut out = format!(
            "scenario: {}\nseed: {}\nrva: {}\nstop_reason: {}\nfinal_round: {}\nfinal_accuracy: {}\ntotal_cost: {}\nbudget: {}\n",
            s.scenario, s.seed, s.mode, s.stop_reason, s.final_round, s.final_accuracy, s.total_cost, s.budget
        );
        for e in &self.event_log {
            out.push_str(&format!("\n[event] round {}: {} -> {}\n", e.round, e.events, e.outcome));
        }
        for d in &s.deployments {
            out.push_str(&format!(
                "\n[deployment] round {}: {} (cost {})\n",
                d.round, d.event, d.change_cost
            ));
            for c in &d.changes {
                out.push_str(&format!("  {c}\n"));
            }
        }
        for d in &self.decisions {
            out.push_str("\n[validation]\n");
            out.push_str(&decision_report(d).to_string());
        }
        out
    }

    /// Writes `trace.csv`, `ledger.csv`, `decisions.csv`, `summary.json`
    /// and `report.txt` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<(), SimError> {
        fs::create_dir_all(dir)?;
        self.write_trace_csv(fs::File::create(dir.join("trace.csv"))?)?;
        self.ledger.write_csv(fs::File::create(dir.join("ledger.csv"))?)?;
        self.write_decisions_csv(fs::File::create(dir.join("decisions.csv"))?)?;
        let mut json = serde_json::to_string_pretty(&self.summary())?;
        json.push('\n');
        fs::write(dir.join("summary.json"), json)?;
        fs::write(dir.join("report.txt"), self.report_text())?;
        Ok(())
    }
}

fn describe_change(item: &crate::config::ChangeItem) -> String {
    match (&item.kind, &item.new_parent) {
        (ChangeKind::ClientRemoved | ChangeKind::AggregatorRemoved, _) | (_, None) => {
            format!("{} {}", item.kind, item.node)
        }
        (_, Some(p)) => format!("{} {} -> {}", item.kind, item.node, p),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub final_accuracy: f64,
    pub final_round: u32,
    pub total_cost: f64,
    pub stop_reason: StopReason,
    pub decisions: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub scenario: String,
    pub seed: u64,
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonTable {
    pub fn from_summaries(summaries: &[(String, RunSummary)]) -> Result<Self, SimError> {
        let (_, first) = summaries
            .first()
            .ok_or_else(|| SimError::ScenarioMismatch("nothing to compare".into()))?;
        for (_, s) in summaries {
            if s.scenario != first.scenario || s.seed != first.seed {
                return Err(SimError::ScenarioMismatch(format!(
                    "{}/seed {} vs {}/seed {}",
                    first.scenario, first.seed, s.scenario, s.seed
                )));
            }
        }
        Ok(ComparisonTable {
            scenario: first.scenario.clone(),
            seed: first.seed,
            rows: summaries
                .iter()
                .map(|(label, s)| ComparisonRow {
                    label: label.clone(),
                    final_accuracy: s.final_accuracy,
                    final_round: s.final_round,
                    total_cost: s.total_cost,
                    stop_reason: s.stop_reason,
                    decisions: s.decisions.join(" "),
                })
                .collect(),
        })
    }
}

impl fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} (seed {})", self.scenario, self.seed)?;
        writeln!(
            f,
            "{:<18} {:>14} {:>11} {:>14} {:>17}  decisions",
            "run", "final_accuracy", "final_round", "total_cost", "stop_reason"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<18} {:>14.6} {:>11} {:>14.3} {:>17}  {}",
                r.label,
                r.final_accuracy,
                r.final_round,
                r.total_cost,
                r.stop_reason.to_string(),
                if r.decisions.is_empty() { "-" } else { &r.decisions }
            )?;
        }
        Ok(())
    }
}

/// Side-by-side comparison of runs over the same scenario and seed.
pub fn compare_runs(runs: &[&SimulationRun]) -> Result<ComparisonTable, SimError> {
    if runs.len() < 2 {
        return Err(SimError::ScenarioMismatch("need at least two runs".into()));
    }
    let summaries: Vec<_> = runs.iter().map(|r| (r.mode.to_string(), r.summary())).collect();
    ComparisonTable::from_summaries(&summaries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AggregationFrequency;
    use std::collections::BTreeMap;

    fn flat_trace(values: &[f64]) -> ProgressTrace {
        let cfg = HflConfiguration {
            ga: NodeId::from("GA"),
            clusters: BTreeMap::new(),
            frequency: AggregationFrequency::new(1, 1),
        };
        let mut t = ProgressTrace::new(cfg);
        for (i, v) in values.iter().enumerate() {
            t.record(i as u32 + 1, *v);
        }
        t
    }

    #[test]
    fn convergence_threshold() {
        assert!(convergence_check(&flat_trace(&[0.2, 0.6]), Some(0.5), 5));
        assert!(!convergence_check(&flat_trace(&[0.2, 0.4]), Some(0.5), 5));
    }

    #[test]
    fn convergence_patience() {
        let rising: Vec<f64> = (0..20).map(|i| 0.1 + 0.01 * f64::from(i)).collect();
        assert!(!convergence_check(&flat_trace(&rising), None, 5));
        assert!(!convergence_check(&flat_trace(&[0.5; 5]), None, 5));
        assert!(convergence_check(&flat_trace(&[0.5; 6]), None, 5));
        assert!(!convergence_check(&flat_trace(&[]), None, 1));
    }

    #[test]
    fn event_labels() {
        let e = Event { at_round: 3, kind: EventKind::NodeLeft { id: NodeId::from("C1") } };
        assert_eq!(e.label(), "node_left:C1");
        assert!(e.notice().node_left);
    }
}
