//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use hflsim::scenario::{load_scenario, Scenario};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn shipped(name: &str) -> Scenario {
    load_scenario(repo_root().join("scenarios").join(format!("{name}.toml"))).expect("shipped scenario loads")
}

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(format!("{name}.toml"))
}

pub const SHIPPED: [&str; 5] = ["scenario_1a", "scenario_1b", "scenario_2a", "scenario_2b", "scenario_2b_linear"];

/// Textbook least squares of `y` on `ln r`, via the normal equations.
pub fn log_fit(points: &[(u32, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (r, y) in points {
        let x = f64::from(*r).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let b = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    let a = (sy - b * sx) / n;
    (a, b)
}

/// Hierarchy given as LA -> (LA-to-GA cost, [client-to-LA costs]).
pub struct CostTable {
    pub clusters: BTreeMap<String, (f64, Vec<f64>)>,
}

impl CostTable {
    /// Global part: one update per LA up to the GA.
    pub fn psi_ga(&self, s_mu: f64) -> f64 {
        self.clusters.values().map(|(la_ga, _)| la_ga * s_mu).sum()
    }

    /// Local part: L exchanges per client with its LA.
    pub fn psi_la(&self, s_mu: f64, local_rounds: u32) -> f64 {
        f64::from(local_rounds) * self.clusters.values().flat_map(|(_, cs)| cs).map(|c| c * s_mu).sum::<f64>()
    }

    pub fn psi_gr(&self, s_mu: f64, local_rounds: u32) -> f64 {
        self.psi_ga(s_mu) + self.psi_la(s_mu, local_rounds)
    }
}

/// Cost table of the shipped scenarios before the join.
pub fn shipped_table_before() -> CostTable {
    CostTable {
        clusters: [("LA1", (50.0, vec![30.0; 4])), ("LA2", (50.0, vec![30.0; 4]))]
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect(),
    }
}

/// After C9 (60 to LA1) and C10 (60 to LA2) join.
pub fn shipped_table_after() -> CostTable {
    let mut t = shipped_table_before();
    for (_, cs) in t.clusters.values_mut() {
        cs.push(60.0);
    }
    t
}

/// Change cost of the shipped join: each newcomer pulls the service
/// artifacts from the GA (default cost 60) and the model from its LA (60).
pub fn shipped_join_change_cost(s_svc: f64, m: f64) -> f64 {
    2.0 * (s_svc * 60.0 + m * 60.0)
}

/// Round-by-round budget oracle for a piecewise schedule: `segments` are
/// (first round, per-round cost) and `charges` are (round, amount) booked
/// after that round's per-round cost. Returns (last completed round, total).
pub fn budget_oracle(budget: f64, segments: &[(u32, f64)], charges: &[(u32, f64)]) -> (u32, f64) {
    let mut total = 0.0;
    let mut round = 0;
    loop {
        let next = round + 1;
        let cost = segments.iter().rev().find(|(from, _)| *from <= next).expect("schedule covers round").1;
        if total + cost > budget {
            return (round, total);
        }
        total += cost;
        round = next;
        for (_, amount) in charges.iter().filter(|(r, _)| *r == round) {
            if total + amount <= budget {
                total += amount;
            }
        }
    }
}

/// Manual revert-or-keep evaluation from a recorded accuracy trace.
pub struct RecValOracle {
    pub a_orig: f64,
    pub a_new: f64,
    pub r_final_orig: f64,
    pub r_final_new: f64,
    pub revert: bool,
}

pub fn recval_oracle(
    accuracies: &[(u32, f64)],
    r_rec: u32,
    r_val: u32,
    remaining: f64,
    psi_rc: f64,
    psi_gr_orig: f64,
    psi_gr_new: f64,
) -> RecValOracle {
    let before: Vec<_> = accuracies.iter().copied().filter(|(r, _)| *r <= r_rec).collect();
    let after: Vec<_> = accuracies.iter().copied().filter(|(r, _)| *r > r_rec && *r <= r_val).collect();
    let (ao, bo) = log_fit(&before);
    let (an, bn) = log_fit(&after);
    let r_final_orig = f64::from(r_val) + (remaining - psi_rc) / psi_gr_orig;
    let r_final_new = f64::from(r_val) + remaining / psi_gr_new;
    let a_orig = (ao + bo * r_final_orig.ln()).clamp(0.0, 1.0);
    let a_new = (an + bn * r_final_new.ln()).clamp(0.0, 1.0);
    RecValOracle {
        a_orig,
        a_new,
        r_final_orig,
        r_final_new,
        revert: a_orig > a_new,
    }
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
