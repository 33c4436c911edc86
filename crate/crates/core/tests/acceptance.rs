//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use hflsim::config::{apply_changes, diff_configurations, AggregationFrequency, HflConfiguration};
use hflsim::cost::{final_round, per_round_cost, CostParams};
use hflsim::learning::linear::{softmax_gradient, softmax_loss};
use hflsim::learning::{
    run_global_round, Dataset, Learner, LearningError, ModelVector, PipelineState, TrainingParams,
};
use hflsim::rva::{fit_regression, Decision, RegressionKind, RvaMode};
use hflsim::scenario::load_scenario;
use hflsim::simkit::{run_simulation, SimulationRun, StopReason};
use hflsim::topology::{DataProfile, NodeId, NodeSpec, Topology};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome, Duration);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn id(s: &str) -> NodeId {
    NodeId::from(s)
}

// 1 ------------------------------------------------------------------------

fn paper_shaped(table: &CostTable) -> (Topology, HflConfiguration) {
    let mut nodes = vec![NodeSpec::aggregator("GA").with_artifacts(true)];
    let mut links = Vec::new();
    let mut clusters = BTreeMap::new();
    for (la, (la_ga, client_costs)) in &table.clusters {
        nodes.push(NodeSpec::aggregator(la.as_str()).with_artifacts(true));
        links.push((id(la), id("GA"), *la_ga));
        let mut members = BTreeSet::new();
        for (i, c) in client_costs.iter().enumerate() {
            let name = format!("{la}-C{i}");
            nodes.push(NodeSpec::client(name.as_str(), DataProfile::uniform(&[0, 1], 10)).with_artifacts(true));
            links.push((id(&name), id(la), *c));
            members.insert(id(&name));
        }
        clusters.insert(id(la), members);
    }
    let topo = Topology::new(nodes, links, 999.0, id("GA"), id("GA")).unwrap();
    let cfg = HflConfiguration { ga: id("GA"), clusters, frequency: AggregationFrequency::new(2, 2) };
    (topo, cfg)
}

fn criterion_1() -> Outcome {
    let s_mu = 3.3;
    let params = CostParams::new(20.0, s_mu);
    let tables = [
        shipped_table_before(),
        CostTable {
            clusters: [
                ("LA1", (47.5, vec![12.0, 31.25, 7.0, 19.9])),
                ("LA2", (88.0, vec![3.3, 41.0, 26.6, 15.0])),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
        },
    ];
    for table in &tables {
        let (topo, cfg) = paper_shaped(table);
        let got = per_round_cost(&cfg, &topo, &params).map_err(|e| e.to_string())?;
        let want = table.psi_gr(s_mu, 2);
        ensure!(rel_close(got, want, 1e-9), "per-round cost {got} vs oracle {want}");
    }
    ensure!(rel_close(shipped_table_before().psi_gr(3.3, 2), 1914.0, 1e-12), "hand value 1914");

    let rounds = 25;
    let mut s = shipped("scenario_1a");
    s.events.clear();
    s.horizon = rounds;
    let run = run_simulation(&s, RvaMode::Enabled).map_err(|e| e.to_string())?;
    ensure!(run.final_round() == rounds, "ran {} rounds", run.final_round());
    let want = f64::from(rounds) * shipped_table_before().psi_gr(3.3, 2);
    ensure!(rel_close(run.total_cost(), want, 1e-9), "ledger {} vs {want}", run.total_cost());
    Ok(format!("per-round 1914 and a heterogeneous table match; {rounds} rounds cost {want}"))
}

// 2 ------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..200 {
        // amounts in thousandths so the oracle can run in exact integers
        let remaining_m: i64 = rng.gen_range(0..=200_000_000);
        let revert_m: i64 = rng.gen_range(0..=20_000_000);
        let per_round_m: i64 = if trial % 5 == 0 {
            // exact divisors exercise the boundary
            let k = rng.gen_range(1..=400);
            ((remaining_m - revert_m).max(1) / k).max(1)
        } else {
            rng.gen_range(10_000..=5_000_000)
        };
        let current: u32 = rng.gen_range(1..=100);
        let predicted = final_round(
            current,
            remaining_m as f64 / 1000.0,
            revert_m as f64 / 1000.0,
            per_round_m as f64 / 1000.0,
        )
        .map_err(|e| e.to_string())?
        .floor();

        let mut left = remaining_m - revert_m;
        let mut round = current;
        if left >= 0 {
            while left >= per_round_m {
                left -= per_round_m;
                round += 1;
            }
        }
        ensure!(
            predicted == f64::from(round),
            "trial {trial}: floor(final_round) {predicted} vs oracle {round} (B_rem {remaining_m}, rc {revert_m}, gr {per_round_m}, in 1/1000)"
        );
    }
    Ok("200/200 draws agree exactly".into())
}

// 3 ------------------------------------------------------------------------

fn role_map(c: &HflConfiguration) -> BTreeMap<NodeId, (u8, NodeId)> {
    let mut m = BTreeMap::new();
    m.insert(c.ga.clone(), (0, c.ga.clone()));
    for (la, clients) in &c.clusters {
        m.insert(la.clone(), (1, c.ga.clone()));
        for cl in clients {
            m.insert(cl.clone(), (2, la.clone()));
        }
    }
    m
}

fn oracle_change_count(a: &HflConfiguration, b: &HflConfiguration) -> usize {
    let (ra, rb) = (role_map(a), role_map(b));
    let nodes: BTreeSet<_> = ra.keys().chain(rb.keys()).collect();
    nodes.into_iter().filter(|n| ra.get(*n) != rb.get(*n)).count()
}

fn cfg(clusters: &[(&str, &[&str])]) -> HflConfiguration {
    HflConfiguration {
        ga: id("GA"),
        clusters: clusters
            .iter()
            .map(|(la, cs)| (id(la), cs.iter().map(|c| id(c)).collect()))
            .collect(),
        frequency: AggregationFrequency::new(2, 2),
    }
}

fn random_config(rng: &mut ChaCha8Rng) -> HflConfiguration {
    let ga = ["GA", "N0", "N1"][rng.gen_range(0..3)];
    let mut roles: Vec<(NodeId, u8)> = (0..12).map(|i| (id(&format!("N{i}")), rng.gen_range(0..5))).collect();
    roles.retain(|(n, _)| n.as_str() != ga);
    let las: Vec<NodeId> = roles.iter().filter(|(_, r)| *r == 1).map(|(n, _)| n.clone()).collect();
    let mut clusters: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    if !las.is_empty() {
        for (n, r) in &roles {
            if *r >= 2 {
                clusters.entry(las[rng.gen_range(0..las.len())].clone()).or_default().insert(n.clone());
            }
        }
    }
    HflConfiguration { ga: id(ga), clusters, frequency: AggregationFrequency::new(2, 2) }
}

fn criterion_3() -> Outcome {
    let before = cfg(&[("LA1", &["C1", "C2", "C3"]), ("LA2", &["C4", "C5", "C6"])]);
    let after = cfg(&[("LA1", &["C1", "C4", "C5", "C7"]), ("LA2", &["C2", "C3", "C6"])]);
    let d = diff_configurations(&before, &after);
    ensure!(d.len() == 5, "worked example gives {} changes", d.len());
    ensure!(oracle_change_count(&before, &after) == 5, "oracle disagrees on the example");
    ensure!(apply_changes(&before, &d) == after, "example does not patch back");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..1000 {
        let (a, b) = (random_config(&mut rng), random_config(&mut rng));
        let d = diff_configurations(&a, &b);
        ensure!(apply_changes(&a, &d) == b, "pair {i}: patch does not reproduce the target");
        ensure!(d.len() == oracle_change_count(&a, &b), "pair {i}: {} changes vs oracle {}", d.len(), oracle_change_count(&a, &b));
    }
    Ok("|dC| = 5 on the worked example; 1000/1000 random pairs round-trip".into())
}

// 4 ------------------------------------------------------------------------

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..100 {
        let a: f64 = rng.gen_range(-1.0..1.0);
        let b: f64 = rng.gen_range(-0.5..0.5);
        let pts: Vec<_> = (1..=10).map(|r| (r, a + b * f64::from(r).ln())).collect();
        let f = fit_regression(&pts, RegressionKind::Logarithmic).map_err(|e| e.to_string())?;
        ensure!((f.a - a).abs() <= 1e-9 && (f.b - b).abs() <= 1e-9, "noise-free fit ({}, {}) vs ({a}, {b})", f.a, f.b);
    }
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut correct = 0;
    for _ in 0..1000 {
        let a: f64 = rng.gen_range(0.1..0.5);
        let b: f64 = rng.gen_range(0.02..0.2) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let pts: Vec<_> = (1..=10)
            .map(|r| (r, a + b * f64::from(r).ln() + noise.sample(&mut rng)))
            .collect();
        let f = fit_regression(&pts, RegressionKind::Logarithmic).map_err(|e| e.to_string())?;
        if f.b.signum() == b.signum() {
            correct += 1;
        }
    }
    ensure!(correct >= 990, "slope sign correct in {correct}/1000 noisy trials");
    Ok(format!("exact recovery; slope sign correct in {correct}/1000 noisy trials"))
}

// 5 ------------------------------------------------------------------------

/// Returns a fixed, client-specific model regardless of the input.
struct FixedModels(HashMap<NodeId, ModelVector>);

impl Learner for FixedModels {
    fn initial_model(&self) -> ModelVector {
        ModelVector::zeros(10)
    }
    fn train_local(
        &self,
        client: &NodeId,
        _model: &ModelVector,
        _profile: &DataProfile,
        _params: &TrainingParams,
        _step_seed: u64,
    ) -> Result<ModelVector, LearningError> {
        Ok(self.0[client].clone())
    }
    fn evaluate(&self, _model: &ModelVector, _round: u32, _participants: &[&DataProfile]) -> Result<f64, LearningError> {
        Ok(0.0)
    }
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = TrainingParams { local_epochs: 1, local_rounds: 1, learning_rate: 0.1, batch_size: 8, seed: 0 };
    for inst in 0..500 {
        let n_las = rng.gen_range(1..=5);
        let mut nodes = vec![NodeSpec::aggregator("GA")];
        let mut clusters = BTreeMap::new();
        let mut models = HashMap::new();
        let (mut weighted, mut total) = (vec![0.0; 10], 0u64);
        for l in 0..n_las {
            let la = format!("LA{l}");
            nodes.push(NodeSpec::aggregator(la.as_str()));
            let mut members = BTreeSet::new();
            for c in 0..rng.gen_range(1..=6) {
                let name = format!("C{l}-{c}");
                let n: u64 = rng.gen_range(1..=5000);
                nodes.push(NodeSpec::client(name.as_str(), DataProfile::uniform(&[0], n)));
                let w: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
                for (acc, x) in weighted.iter_mut().zip(&w) {
                    *acc += n as f64 * x;
                }
                total += n;
                models.insert(id(&name), ModelVector(w));
                members.insert(id(&name));
            }
            clusters.insert(id(&la), members);
        }
        let topo = Topology::new(nodes, vec![], 1.0, id("GA"), id("GA")).map_err(|e| e.to_string())?;
        let config = HflConfiguration { ga: id("GA"), clusters, frequency: AggregationFrequency::new(1, 1) };
        let learner = FixedModels(models);
        let (state, _) = run_global_round(&PipelineState::new(learner.initial_model()), &config, &topo, &params, &learner)
            .map_err(|e| e.to_string())?;
        for (k, (got, acc)) in state.model.0.iter().zip(&weighted).enumerate() {
            let flat = acc / total as f64;
            ensure!((got - flat).abs() <= 1e-12, "instance {inst}, coordinate {k}: {got} vs flat {flat}");
        }
    }

    let (classes, dim) = (4usize, 5usize);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let n = 30;
        let data = Dataset {
            dimension: dim,
            features: (0..n * dim).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            labels: (0..n).map(|_| rng.gen_range(0..classes as u32)).collect(),
        };
        let model = ModelVector((0..classes * (dim + 1)).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let grad = softmax_gradient(&model, &data).map_err(|e| e.to_string())?;
        let h = 1e-5;
        for (j, g) in grad.iter().enumerate() {
            let (mut up, mut down) = (model.clone(), model.clone());
            up.0[j] += h;
            down.0[j] -= h;
            let fd = (softmax_loss(&up, &data).unwrap() - softmax_loss(&down, &data).unwrap()) / (2.0 * h);
            let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
            worst = worst.max(rel);
            ensure!(rel <= 1e-5, "trial {trial}, weight {j}: analytic {g} vs finite difference {fd}");
        }
    }
    Ok(format!("500/500 hierarchies equal flat FedAvg; worst gradient relative error {worst:.1e}"))
}

// 6 ------------------------------------------------------------------------

const SEEDS: std::ops::Range<u64> = 1..11;

fn run(name: &str, seed: u64, mode: RvaMode) -> Result<SimulationRun, String> {
    run_simulation(&shipped(name).with_seed(seed), mode).map_err(|e| format!("{name}/{seed}/{mode}: {e}"))
}

/// Hand-derived costs of the shipped join.
struct JoinOracle {
    psi_gr_orig: f64,
    psi_gr_new: f64,
    change_cost: f64,
}

fn join_oracle() -> JoinOracle {
    JoinOracle {
        psi_gr_orig: shipped_table_before().psi_gr(3.3, 2),
        psi_gr_new: shipped_table_after().psi_gr(3.3, 2),
        change_cost: shipped_join_change_cost(20.0, 3.3),
    }
}

fn check_recval(name: &str, seed: u64, r: &SimulationRun, expect: Decision) -> Result<(), String> {
    ensure!(r.decisions.len() == 1, "{name}/{seed}: {} decisions", r.decisions.len());
    let d = &r.decisions[0];
    ensure!(d.reconfig_round == 10 && d.round == 15, "{name}/{seed}: validated at {} for reconfiguration at {}", d.round, d.reconfig_round);
    ensure!(d.decision == expect && !d.forced, "{name}/{seed}: decision {} expected {expect}", d.decision);

    let o = join_oracle();
    let spent = 10.0 * o.psi_gr_orig + o.change_cost + 5.0 * o.psi_gr_new;
    let manual = recval_oracle(&r.trace.accuracies, 10, 15, 100_000.0 - spent, 0.0, o.psi_gr_orig, o.psi_gr_new);
    ensure!(manual.revert == (expect == Decision::Revert), "{name}/{seed}: manual evaluation disagrees");
    ensure!(
        (manual.a_orig - d.a_final_orig.unwrap_or(f64::NAN)).abs() < 1e-9
            && (manual.a_new - d.a_final_new.unwrap_or(f64::NAN)).abs() < 1e-9,
        "{name}/{seed}: forecasts ({:?}, {:?}) vs manual ({}, {})",
        d.a_final_orig,
        d.a_final_new,
        manual.a_orig,
        manual.a_new
    );
    Ok(())
}

fn criterion_6() -> Outcome {
    let mut margins = Vec::new();
    for seed in SEEDS {
        for name in ["scenario_1a", "scenario_2a"] {
            let on = run(name, seed, RvaMode::Enabled)?;
            let off = run(name, seed, RvaMode::Disabled)?;
            check_recval(name, seed, &on, Decision::Revert)?;
            ensure!(
                on.final_accuracy() > off.final_accuracy(),
                "{name}/{seed}: RVA {} not above disabled {}",
                on.final_accuracy(),
                off.final_accuracy()
            );
            margins.push(on.final_accuracy() - off.final_accuracy());
        }
        for name in ["scenario_1b", "scenario_2b"] {
            let on = run(name, seed, RvaMode::Enabled)?;
            let forced = run(name, seed, RvaMode::ForceRevert)?;
            check_recval(name, seed, &on, Decision::Keep)?;
            ensure!(
                forced.decisions.iter().all(|d| d.decision == Decision::Revert && d.forced),
                "{name}/{seed}: baseline did not revert"
            );
            ensure!(
                on.final_accuracy() >= forced.final_accuracy(),
                "{name}/{seed}: RVA {} below original {}",
                on.final_accuracy(),
                forced.final_accuracy()
            );
            margins.push(on.final_accuracy() - forced.final_accuracy());
        }
    }
    let min = margins.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(format!("4 scenarios x {} seeds; smallest accuracy margin {min:.4}", SEEDS.end - SEEDS.start))
}

// 7 ------------------------------------------------------------------------

fn check_budget(r: &SimulationRun) -> Result<(), String> {
    let budget = r.ledger.budget();
    for e in r.ledger.entries() {
        ensure!(e.total <= budget, "{}: total {} exceeds budget at round {}", r.scenario, e.total, e.round);
    }
    if r.stop_reason == StopReason::BudgetExhausted {
        let next = r.refused_round_cost.ok_or("missing refused round cost")?;
        ensure!(r.total_cost() + next > budget, "{}: stopped with budget to spare", r.scenario);
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let o = join_oracle();
    ensure!(o.psi_gr_new > o.psi_gr_orig, "new configuration is not more expensive");
    let (oracle_off, total_off) =
        budget_oracle(100_000.0, &[(1, o.psi_gr_orig), (11, o.psi_gr_new)], &[(10, o.change_cost)]);
    let (oracle_on, total_on) = budget_oracle(
        100_000.0,
        &[(1, o.psi_gr_orig), (11, o.psi_gr_new), (16, o.psi_gr_orig)],
        &[(10, o.change_cost)],
    );
    for seed in SEEDS {
        for name in ["scenario_1a", "scenario_2a"] {
            let on = run(name, seed, RvaMode::Enabled)?;
            let off = run(name, seed, RvaMode::Disabled)?;
            for r in [&on, &off] {
                ensure!(r.stop_reason == StopReason::BudgetExhausted, "{name}/{seed}: stopped by {}", r.stop_reason);
                check_budget(r)?;
            }
            ensure!(off.final_round() <= on.final_round(), "{name}/{seed}: disabled ran longer");
            ensure!(
                off.final_round() == oracle_off && rel_close(off.total_cost(), total_off, 1e-9),
                "{name}/{seed}: disabled run ended at {} with {} vs oracle {oracle_off} with {total_off}",
                off.final_round(),
                off.total_cost()
            );
            ensure!(
                on.final_round() == oracle_on && rel_close(on.total_cost(), total_on, 1e-9),
                "{name}/{seed}: RVA run ended at {} with {} vs oracle {oracle_on} with {total_on}",
                on.final_round(),
                on.total_cost()
            );
        }
        for name in ["scenario_1b", "scenario_2b"] {
            for mode in [RvaMode::Enabled, RvaMode::Disabled, RvaMode::ForceRevert] {
                check_budget(&run(name, seed, mode)?)?;
            }
        }
    }
    Ok(format!("disabled exhausts at round {oracle_off}, RVA at {oracle_on}, both matching the oracle"))
}

// 8 ------------------------------------------------------------------------

fn criterion_8() -> Outcome {
    let s = load_scenario(fixture_path("node_leave")).map_err(|e| e.to_string())?;
    let (left_at, w) = (8, s.settings.validation_window);
    let leaver = id("LA1");
    for mode in [RvaMode::Enabled, RvaMode::ForceRevert] {
        let r = run_simulation(&s, mode).map_err(|e| e.to_string())?;
        ensure!(r.deployments.len() == 1, "{} deployments", r.deployments.len());
        let dep = &r.deployments[0];
        ensure!(dep.round == left_at + w, "deployed at {} instead of {}", dep.round, left_at + w);
        ensure!(dep.validation_round == Some(left_at + 2 * w), "validation scheduled for {:?}", dep.validation_round);
        ensure!(r.decisions.len() == 1 && r.decisions[0].round == left_at + 2 * w, "validated at {:?}", r.decisions.first().map(|d| d.round));
        let present = r.rounds_with(&leaver);
        ensure!(present.iter().all(|&x| x <= left_at), "departed node trained in rounds {present:?}");
        ensure!(present.len() as u32 == left_at - 1, "node present in {present:?} before leaving");
    }
    let off = run_simulation(&s, RvaMode::Disabled).map_err(|e| e.to_string())?;
    ensure!(off.deployments.first().map(|d| d.round) == Some(left_at + w), "disabled deployment round");
    ensure!(off.decisions.is_empty(), "disabled run validated");
    Ok(format!("leave at {left_at}: deploy at {}, validate at {}", left_at + w, left_at + 2 * w))
}

// 9 ------------------------------------------------------------------------

fn csv_bytes(r: &SimulationRun) -> Result<[Vec<u8>; 3], String> {
    let mut out = [Vec::new(), Vec::new(), Vec::new()];
    r.write_trace_csv(&mut out[0]).map_err(|e| e.to_string())?;
    r.ledger.write_csv(&mut out[1]).map_err(|e| e.to_string())?;
    r.write_decisions_csv(&mut out[2]).map_err(|e| e.to_string())?;
    Ok(out)
}

fn criterion_9() -> Outcome {
    let mut checked = 0;
    for name in SHIPPED {
        let s = shipped(name);
        for mode in [RvaMode::Enabled, RvaMode::Disabled, RvaMode::ForceRevert] {
            let first = csv_bytes(&run_simulation(&s, mode).map_err(|e| e.to_string())?)?;
            let second = csv_bytes(&run_simulation(&s, mode).map_err(|e| e.to_string())?)?;
            for (k, file) in ["trace", "ledger", "decisions"].iter().enumerate() {
                ensure!(first[k] == second[k], "{name} ({mode}): {file}.csv differs between runs");
            }
            checked += 1;
            if name.ends_with("linear") {
                break;
            }
        }
    }
    Ok(format!("{checked} scenario/mode pairs reproduce byte-identical CSVs"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("cost-model exactness", criterion_1, Duration::from_secs(1)),
        ("final-round prediction consistency", criterion_2, Duration::from_secs(1)),
        ("change-set fidelity", criterion_3, Duration::from_secs(5)),
        ("regression recovery", criterion_4, Duration::from_secs(5)),
        ("aggregation equivalence", criterion_5, Duration::from_secs(10)),
        ("RVA decision correctness", criterion_6, Duration::from_secs(30)),
        ("budget safety and earlier exhaustion", criterion_7, Duration::from_secs(30)),
        ("node-leave postponement", criterion_8, Duration::from_secs(5)),
        ("end-to-end determinism", criterion_9, Duration::from_secs(30)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    println!();
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2?}): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {why}", i + 1);
            }
        }
    }
    println!();
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
