//! Reconfiguration and reconfiguration validation.
//!
//! The [`Orchestrator`] reacts to infrastructure events by computing a
//! best-fit configuration and deploying it, then validates the change after
//! a window of `W` global rounds. Validation fits a regression to the
//! accuracy observed before and after the reconfiguration, predicts the
//! accuracy each configuration would reach at the round where the budget
//! runs out, and reverts when the original configuration is predicted to
//! finish strictly higher.

use std::collections::VecDeque;
use std::fmt;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{
    diff_configurations, AggregationFrequency, ChangeSet, ConfigError, HflConfiguration, StrategyId,
    StrategyRegistry,
};
use crate::cost::{change_set_cost, final_round, per_round_cost, CostError, CostLedger, CostParams};
use crate::learning::ProgressTrace;
use crate::topology::{NodeId, Topology, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RvaError {
    #[error("regression needs at least 2 points, got {0}")]
    InsufficientPoints(usize),
    #[error("regression design is degenerate: all rounds are equal")]
    DegenerateDesign,
    #[error("regression rounds must be >= 1")]
    InvalidRound,
    #[error("configuration strategy failed: {0}")]
    StrategyFailure(#[from] ConfigError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("no clients left in the configuration")]
    NoActiveClients,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionKind {
    #[default]
    Logarithmic,
    Linear,
}

impl RegressionKind {
    fn transform(self, round: f64) -> f64 {
        match self {
            RegressionKind::Logarithmic => round.ln(),
            RegressionKind::Linear => round,
        }
    }
}

/// `accuracy = a + b * g(round)` with `g = ln` or identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub kind: RegressionKind,
    pub a: f64,
    pub b: f64,
    pub fitted_points: usize,
}

/// Ordinary least squares on `(round, accuracy)` points.
pub fn fit_regression(points: &[(u32, f64)], kind: RegressionKind) -> Result<RegressionFit, RvaError> {
    if points.len() < 2 {
        return Err(RvaError::InsufficientPoints(points.len()));
    }
    if points.iter().any(|(r, _)| *r < 1) {
        return Err(RvaError::InvalidRound);
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(r, _)| kind.transform(f64::from(*r))).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, (_, y)) in xs.iter().zip(points) {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(RvaError::DegenerateDesign);
    }
    let b = sxy / sxx;
    Ok(RegressionFit {
        kind,
        a: y_mean - b * x_mean,
        b,
        fitted_points: points.len(),
    })
}

/// Fitted accuracy at `round`, clamped to `[0, 1]`. Rounds below 1 are
/// evaluated at 1; an infinite round saturates in the direction of `b`.
pub fn predict(fit: &RegressionFit, round: f64) -> f64 {
    if fit.b == 0.0 {
        return fit.a.clamp(0.0, 1.0);
    }
    let x = fit.kind.transform(round.max(1.0));
    (fit.a + fit.b * x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrchestratorSettings {
    pub validation_window: u32,
    #[serde(default)]
    pub regression: RegressionKind,
    pub strategy: StrategyId,
    pub la_count: usize,
    pub budget: f64,
}

impl OrchestratorSettings {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.validation_window < 1 {
            v.push("orchestrator.validation_window must be >= 1".to_owned());
        }
        if self.regression == RegressionKind::Logarithmic && self.validation_window < 2 {
            v.push("orchestrator.validation_window must be >= 2 for a logarithmic fit".to_owned());
        }
        if self.la_count < 1 {
            v.push("orchestrator.la_count must be >= 1".to_owned());
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            v.push("orchestrator.budget must be positive".to_owned());
        }
        v
    }
}

/// How validations are handled in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RvaMode {
    /// Validate and keep or revert on the forecast.
    #[default]
    Enabled,
    /// Never validate; every reconfiguration stays.
    Disabled,
    /// Validate, but always revert.
    ForceRevert,
}

impl fmt::Display for RvaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RvaMode::Enabled => "on",
            RvaMode::Disabled => "off",
            RvaMode::ForceRevert => "force-revert",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingValidation {
    pub due_round: u32,
    pub orig_config: HflConfiguration,
    pub reconfig_round: u32,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingDeployment {
    /// Deployed at the end of this round.
    pub due_round: u32,
    pub config: HflConfiguration,
    pub orig_config: HflConfiguration,
    pub event: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Keep,
    Revert,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Keep => "keep",
            Decision::Revert => "revert",
        })
    }
}

/// Everything needed to recompute a validation decision by hand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationDecision {
    pub round: u32,
    pub reconfig_round: u32,
    pub event: String,
    pub decision: Decision,
    /// Decision was overridden to `Revert`.
    pub forced: bool,
    pub budget: f64,
    pub total_cost: f64,
    pub remaining_budget: f64,
    pub psi_rc: f64,
    pub psi_gr_orig: f64,
    pub psi_gr_new: f64,
    pub r_final_orig: f64,
    pub r_final_new: f64,
    pub fit_orig: Option<RegressionFit>,
    pub fit_new: Option<RegressionFit>,
    pub a_final_orig: Option<f64>,
    pub a_final_new: Option<f64>,
    pub warning: Option<String>,
}

/// Final round, or infinity when running costs nothing.
fn horizon(round: u32, remaining: f64, revert: f64, per_round: f64) -> Result<f64, RvaError> {
    match final_round(round, remaining, revert, per_round) {
        Ok(r) => Ok(r),
        Err(CostError::NonPositivePerRoundCost(_)) => Ok(f64::INFINITY),
        Err(e) => Err(e.into()),
    }
}

/// Drops nodes that are no longer part of the topology.
pub fn restrict_to_topology(config: &HflConfiguration, topology: &Topology) -> HflConfiguration {
    let mut out = config.clone();
    let gone: Vec<NodeId> = config
        .clusters
        .iter()
        .flat_map(|(la, cs)| std::iter::once(la).chain(cs))
        .filter(|n| !topology.contains(n))
        .cloned()
        .collect();
    for n in &gone {
        out = out.without_node(n);
    }
    out
}

/// Keep-or-revert decision for a pending validation. Pure: the caller
/// applies the outcome.
/// Forecasts closer than this are a tie; round-off between the two fits
/// must not trigger a revert.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn validate_reconfiguration(
    pending: &PendingValidation,
    trace: &ProgressTrace,
    ledger: &CostLedger,
    settings: &OrchestratorSettings,
    topology: &Topology,
    params: &CostParams,
) -> Result<ValidationDecision, RvaError> {
    let new = &trace.active_config;
    let orig = restrict_to_topology(&pending.orig_config, topology);
    let psi_rc = change_set_cost(&diff_configurations(new, &orig), topology, params)?;
    let psi_gr_orig = per_round_cost(&orig, topology, params)?;
    let psi_gr_new = per_round_cost(new, topology, params)?;
    let round = trace.current_round;
    let remaining = ledger.remaining();
    let r_final_orig = horizon(round, remaining, psi_rc, psi_gr_orig)?;
    let r_final_new = horizon(round, remaining, 0.0, psi_gr_new)?;

    let mut out = ValidationDecision {
        round,
        reconfig_round: pending.reconfig_round,
        event: pending.event.clone(),
        decision: Decision::Keep,
        forced: false,
        budget: ledger.budget(),
        total_cost: ledger.total_cost(),
        remaining_budget: remaining,
        psi_rc,
        psi_gr_orig,
        psi_gr_new,
        r_final_orig,
        r_final_new,
        fit_orig: None,
        fit_new: None,
        a_final_orig: None,
        a_final_new: None,
        warning: None,
    };

    let fits = fit_regression(&trace.up_to(pending.reconfig_round), settings.regression).and_then(|fo| {
        fit_regression(&trace.after(pending.reconfig_round), settings.regression).map(|fnew| (fo, fnew))
    });
    let (fit_orig, fit_new) = match fits {
        Ok(f) => f,
        Err(e) => {
            warn!("validation at round {round}: {e}; keeping the new configuration");
            out.warning = Some(e.to_string());
            return Ok(out);
        }
    };
    let a_orig = predict(&fit_orig, r_final_orig);
    let a_new = predict(&fit_new, r_final_new);
    out.fit_orig = Some(fit_orig);
    out.fit_new = Some(fit_new);
    out.a_final_orig = Some(a_orig);
    out.a_final_new = Some(a_new);
    if a_orig > a_new + TIE_TOLERANCE {
        if psi_rc <= remaining {
            out.decision = Decision::Revert;
        } else {
            out.warning = Some(format!("revert cost {psi_rc} exceeds remaining budget {remaining}"));
        }
    }
    Ok(out)
}

/// Structured, human-readable rendering of a decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionReport {
    pub fields: Vec<(&'static str, String)>,
}

impl fmt::Display for DecisionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.fields {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

pub fn decision_report(d: &ValidationDecision) -> DecisionReport {
    let opt = |v: Option<f64>| v.map_or_else(|| "n/a".to_owned(), |x| x.to_string());
    let fit = |f: &Option<RegressionFit>| {
        f.map_or_else(|| "n/a".to_owned(), |f| format!("a={} b={} points={}", f.a, f.b, f.fitted_points))
    };
    let mut fields = vec![
        ("round", d.round.to_string()),
        ("reconfig_round", d.reconfig_round.to_string()),
        ("event", d.event.clone()),
        ("decision", d.decision.to_string()),
        ("forced", d.forced.to_string()),
        ("budget", d.budget.to_string()),
        ("total_cost", d.total_cost.to_string()),
        ("remaining_budget", d.remaining_budget.to_string()),
        ("psi_rc", d.psi_rc.to_string()),
        ("psi_gr_orig", d.psi_gr_orig.to_string()),
        ("psi_gr_new", d.psi_gr_new.to_string()),
        ("r_final_orig", d.r_final_orig.to_string()),
        ("r_final_new", d.r_final_new.to_string()),
        ("fit_orig", fit(&d.fit_orig)),
        ("fit_new", fit(&d.fit_new)),
        ("a_final_orig", opt(d.a_final_orig)),
        ("a_final_new", opt(d.a_final_new)),
    ];
    if d.decision == Decision::Revert {
        fields.push(("revert_charge", d.psi_rc.to_string()));
    }
    if let Some(w) = &d.warning {
        fields.push(("warning", w.clone()));
    }
    DecisionReport { fields }
}

/// A reconfiguration that was actually deployed.
#[derive(Debug, Clone, PartialEq)]
pub struct DeploymentRecord {
    pub round: u32,
    pub event: String,
    pub changes: ChangeSet,
    pub change_cost: f64,
    pub validation_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReconfigurationOutcome {
    /// Best fit equals the running configuration.
    NoChange,
    /// Deployment scheduled for the end of `deploy_round`.
    Scheduled { deploy_round: u32, changes: ChangeSet },
    /// A reconfiguration or validation is in flight.
    Queued,
}

/// Summary of an infrastructure event for the orchestrator.
#[derive(Debug, Clone, PartialEq)]
pub struct EventNotice {
    pub label: String,
    pub node_left: bool,
}

/// Single logical actor: the simulator feeds it events and round
/// boundaries in order.
pub struct Orchestrator {
    settings: OrchestratorSettings,
    params: CostParams,
    mode: RvaMode,
    strategies: StrategyRegistry,
    pending_deployment: Option<PendingDeployment>,
    pending_validation: Option<PendingValidation>,
    queued: VecDeque<EventNotice>,
}

impl Orchestrator {
    pub fn new(settings: OrchestratorSettings, params: CostParams, mode: RvaMode) -> Self {
        Orchestrator {
            settings,
            params,
            mode,
            strategies: StrategyRegistry::default(),
            pending_deployment: None,
            pending_validation: None,
            queued: VecDeque::new(),
        }
    }

    pub fn with_registry(mut self, strategies: StrategyRegistry) -> Self {
        self.strategies = strategies;
        self
    }

    pub fn settings(&self) -> &OrchestratorSettings {
        &self.settings
    }

    pub fn is_busy(&self) -> bool {
        self.pending_deployment.is_some() || self.pending_validation.is_some()
    }

    pub fn pending_validation(&self) -> Option<&PendingValidation> {
        self.pending_validation.as_ref()
    }

    pub fn pending_deployment(&self) -> Option<&PendingDeployment> {
        self.pending_deployment.as_ref()
    }

    pub fn best_fit(
        &self,
        topology: &Topology,
        frequency: AggregationFrequency,
    ) -> Result<HflConfiguration, RvaError> {
        Ok(self
            .strategies
            .get(&self.settings.strategy)?
            .best_fit(topology, frequency, self.settings.la_count)?)
    }

    /// Reacts to the events of one round. `topology` already reflects them
    /// and departed nodes are already gone from the active configuration.
    pub fn on_events(
        &mut self,
        events: Vec<EventNotice>,
        round: u32,
        topology: &Topology,
        trace: &ProgressTrace,
    ) -> Result<ReconfigurationOutcome, RvaError> {
        if events.is_empty() {
            return Ok(ReconfigurationOutcome::NoChange);
        }
        if self.is_busy() {
            info!("round {round}: {} event(s) queued behind an active reconfiguration", events.len());
            self.queued.extend(events);
            return Ok(ReconfigurationOutcome::Queued);
        }
        let label = events.iter().map(|e| e.label.as_str()).collect::<Vec<_>>().join("+");
        let node_left = events.iter().any(|e| e.node_left);
        let orig = trace.active_config.clone();
        let new = self.best_fit(topology, trace.active_config.frequency)?;
        let changes = diff_configurations(&orig, &new);
        if changes.is_empty() {
            return Ok(ReconfigurationOutcome::NoChange);
        }
        let deploy_round = if node_left {
            round + self.settings.validation_window
        } else {
            round
        };
        self.pending_deployment = Some(PendingDeployment {
            due_round: deploy_round,
            config: new,
            orig_config: orig,
            event: label,
        });
        Ok(ReconfigurationOutcome::Scheduled { deploy_round, changes })
    }

    /// Deploys a reconfiguration due at the end of `round`, charging its
    /// change cost. Skipped when the budget cannot cover it.
    pub fn deploy_due(
        &mut self,
        round: u32,
        topology: &mut Topology,
        trace: &mut ProgressTrace,
        ledger: &mut CostLedger,
    ) -> Result<Option<DeploymentRecord>, RvaError> {
        if self.pending_deployment.as_ref().map(|p| p.due_round) != Some(round) {
            return Ok(None);
        }
        let pending = self.pending_deployment.take().expect("checked above");
        let new = restrict_to_topology(&pending.config, topology);
        if new.clusters.is_empty() {
            return Err(RvaError::NoActiveClients);
        }
        let changes = diff_configurations(&trace.active_config, &new);
        if changes.is_empty() {
            return Ok(None);
        }
        let cost = change_set_cost(&changes, topology, &self.params)?;
        if !ledger.can_afford(cost) {
            warn!("round {round}: reconfiguration cost {cost} exceeds the remaining budget; skipped");
            return Ok(None);
        }
        ledger.charge(round, format!("reconfiguration:{}", pending.event), cost)?;
        mark_artifacts(topology, &changes)?;
        trace.active_config = new;

        let validation_round = if self.mode == RvaMode::Disabled {
            None
        } else {
            let due = round + self.settings.validation_window;
            self.pending_validation = Some(PendingValidation {
                due_round: due,
                orig_config: restrict_to_topology(&pending.orig_config, topology),
                reconfig_round: round,
                event: pending.event.clone(),
            });
            Some(due)
        };
        Ok(Some(DeploymentRecord {
            round,
            event: pending.event,
            changes,
            change_cost: cost,
            validation_round,
        }))
    }

    /// Runs a validation due at the end of `round` and applies a revert.
    pub fn validate_due(
        &mut self,
        round: u32,
        topology: &mut Topology,
        trace: &mut ProgressTrace,
        ledger: &mut CostLedger,
    ) -> Result<Option<ValidationDecision>, RvaError> {
        if self.pending_validation.as_ref().map(|p| p.due_round) != Some(round) {
            return Ok(None);
        }
        let pending = self.pending_validation.take().expect("checked above");
        let mut decision =
            validate_reconfiguration(&pending, trace, ledger, &self.settings, topology, &self.params)?;
        if self.mode == RvaMode::ForceRevert && decision.decision == Decision::Keep {
            if decision.psi_rc <= decision.remaining_budget {
                decision.decision = Decision::Revert;
                decision.forced = true;
            } else {
                warn!("round {round}: forced revert is unaffordable");
            }
        }
        if decision.decision == Decision::Revert {
            let orig = restrict_to_topology(&pending.orig_config, topology);
            let changes = diff_configurations(&trace.active_config, &orig);
            ledger.charge(round, format!("revert:{}", pending.event), decision.psi_rc)?;
            mark_artifacts(topology, &changes)?;
            trace.active_config = orig;
        }
        Ok(Some(decision))
    }

    /// Events held back while a reconfiguration was in flight.
    pub fn take_queued(&mut self) -> Vec<EventNotice> {
        if self.is_busy() {
            return Vec::new();
        }
        self.queued.drain(..).collect()
    }
}

fn mark_artifacts(topology: &mut Topology, changes: &ChangeSet) -> Result<(), TopologyError> {
    for item in changes.iter().filter(|i| i.new_parent.is_some()) {
        if topology.contains(&item.node) {
            *topology = topology.with_artifacts_on(&item.node)?;
        }
    }
    Ok(())
}
