//! C ABI for the hflsim simulator.
//!
//! Scenarios and runs are opaque handles created and destroyed by this
//! library. Every fallible function returns an [`HflStatus`]; on failure,
//! [`hfl_last_error_message`] describes the error on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hflsim::cost::final_round;
use hflsim::rva::{fit_regression, Decision, RegressionKind, RvaMode};
use hflsim::scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
use hflsim::simkit::{run_simulation, SimError, SimulationRun, StopReason};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ValidationError = 4,
    RuntimeError = 5,
    IoError = 6,
    InvalidArgument = 7,
}

/// Values accepted by the `mode` argument of [`hfl_run`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflRvaMode {
    On = 0,
    Off = 1,
    ForceRevert = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflStopReason {
    BudgetExhausted = 0,
    HorizonReached = 1,
    Converged = 2,
}

/// Values accepted by the `kind` argument of [`hfl_fit_regression`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HflRegressionKind {
    Logarithmic = 0,
    Linear = 1,
}

/// Loaded, validated scenario.
pub struct HflScenario {
    inner: Scenario,
}

/// Completed simulation run.
pub struct HflRun {
    inner: SimulationRun,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HflRunSummary {
    pub final_round: u32,
    pub final_accuracy: f64,
    pub total_cost: f64,
    pub budget: f64,
    pub stop_reason: HflStopReason,
    pub reverts: u32,
    pub keeps: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HflRegression {
    pub a: f64,
    pub b: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let mut bytes = message.into().into_bytes();
    bytes.retain(|b| *b != 0);
    let text = CString::new(bytes).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

fn fail(status: HflStatus, message: impl Into<String>) -> HflStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> HflStatus) -> HflStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == HflStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(HflStatus::RuntimeError, "internal panic"),
    }
}

fn scenario_status(e: ScenarioError) -> HflStatus {
    let status = match e {
        ScenarioError::Io { .. } => HflStatus::IoError,
        ScenarioError::Parse(_) => HflStatus::ParseError,
        ScenarioError::Validation(_) => HflStatus::ValidationError,
    };
    fail(status, e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, HflStatus> {
    if p.is_null() {
        return Err(fail(HflStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HflStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn store<T>(out: *mut *mut T, value: T) -> HflStatus {
    // SAFETY: caller checked `out` for null; it points to writable storage.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    HflStatus::Ok
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_scenario_load(path: *const c_char, out: *mut *mut HflScenario) -> HflStatus {
    guard(|| {
        if out.is_null() {
            return fail(HflStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match load_scenario(Path::new(path)) {
            Ok(inner) => store(out, HflScenario { inner }),
            Err(e) => scenario_status(e),
        }
    })
}

/// Parses and validates scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_scenario_from_str(text: *const c_char, out: *mut *mut HflScenario) -> HflStatus {
    guard(|| {
        if out.is_null() {
            return fail(HflStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let text = match read_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_scenario(text) {
            Ok(inner) => store(out, HflScenario { inner }),
            Err(e) => scenario_status(e),
        }
    })
}

/// Replaces the scenario seed, including learner and training seeds.
///
/// # Safety
/// `scenario` must come from this library and not yet be freed.
#[no_mangle]
pub unsafe extern "C" fn hfl_scenario_set_seed(scenario: *mut HflScenario, seed: u64) -> HflStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.inner = s.inner.with_seed(seed);
            HflStatus::Ok
        }
        None => fail(HflStatus::NullPointer, "null scenario"),
    })
}

/// Frees a scenario. Null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hfl_scenario_free(scenario: *mut HflScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs a scenario. `mode` is one of the [`HflRvaMode`] values.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_run(scenario: *const HflScenario, mode: i32, out: *mut *mut HflRun) -> HflStatus {
    guard(|| {
        if out.is_null() {
            return fail(HflStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let Some(s) = scenario.as_ref() else {
            return fail(HflStatus::NullPointer, "null scenario");
        };
        let mode = match mode {
            m if m == HflRvaMode::On as i32 => RvaMode::Enabled,
            m if m == HflRvaMode::Off as i32 => RvaMode::Disabled,
            m if m == HflRvaMode::ForceRevert as i32 => RvaMode::ForceRevert,
            m => return fail(HflStatus::InvalidArgument, format!("unknown mode {m}")),
        };
        match run_simulation(&s.inner, mode) {
            Ok(inner) => store(out, HflRun { inner }),
            Err(e @ SimError::ScenarioInvalid(_)) => fail(HflStatus::ValidationError, e.to_string()),
            Err(e) => fail(HflStatus::RuntimeError, e.to_string()),
        }
    })
}

/// Frees a run. Null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hfl_run_free(run: *mut HflRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_run_summary(run: *const HflRun, out: *mut HflRunSummary) -> HflStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(HflStatus::NullPointer, "null argument");
        };
        let r = &r.inner;
        *out = HflRunSummary {
            final_round: r.final_round(),
            final_accuracy: r.final_accuracy(),
            total_cost: r.total_cost(),
            budget: r.ledger.budget(),
            stop_reason: match r.stop_reason {
                StopReason::BudgetExhausted => HflStopReason::BudgetExhausted,
                StopReason::HorizonReached => HflStopReason::HorizonReached,
                StopReason::Converged => HflStopReason::Converged,
            },
            reverts: r.count(Decision::Revert) as u32,
            keeps: r.count(Decision::Keep) as u32,
        };
        HflStatus::Ok
    })
}

/// Number of recorded rounds; 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hfl_run_trace_len(run: *const HflRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.trace.accuracies.len())
}

/// Round number and accuracy of trace entry `index`.
///
/// # Safety
/// `run` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_run_trace_get(
    run: *const HflRun,
    index: usize,
    out_round: *mut u32,
    out_accuracy: *mut f64,
) -> HflStatus {
    guard(|| {
        let (Some(r), false, false) = (run.as_ref(), out_round.is_null(), out_accuracy.is_null()) else {
            return fail(HflStatus::NullPointer, "null argument");
        };
        match r.inner.trace.accuracies.get(index) {
            Some((round, acc)) => {
                *out_round = *round;
                *out_accuracy = *acc;
                HflStatus::Ok
            }
            None => fail(HflStatus::InvalidArgument, format!("index {index} out of range")),
        }
    })
}

/// Writes trace, ledger, decisions, summary and report files into `dir`.
///
/// # Safety
/// `run` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hfl_run_write_outputs(run: *const HflRun, dir: *const c_char) -> HflStatus {
    guard(|| {
        let Some(r) = run.as_ref() else {
            return fail(HflStatus::NullPointer, "null run");
        };
        let dir = match read_str(dir) {
            Ok(d) => d,
            Err(s) => return s,
        };
        match r.inner.write_outputs(Path::new(dir)) {
            Ok(()) => HflStatus::Ok,
            Err(e) => fail(HflStatus::IoError, e.to_string()),
        }
    })
}

/// Predicted final round `current + (remaining - revert_cost) / per_round`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_final_round(
    current_round: u32,
    remaining_budget: f64,
    revert_cost: f64,
    per_round_cost: f64,
    out: *mut f64,
) -> HflStatus {
    guard(|| {
        if out.is_null() {
            return fail(HflStatus::NullPointer, "null output pointer");
        }
        match final_round(current_round, remaining_budget, revert_cost, per_round_cost) {
            Ok(r) => {
                *out = r;
                HflStatus::Ok
            }
            Err(e) => fail(HflStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Least-squares fit of `accuracies` against `rounds`. `kind` is one of
/// the [`HflRegressionKind`] values.
///
/// # Safety
/// `rounds` and `accuracies` must each hold `len` elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn hfl_fit_regression(
    rounds: *const u32,
    accuracies: *const f64,
    len: usize,
    kind: i32,
    out: *mut HflRegression,
) -> HflStatus {
    guard(|| {
        if rounds.is_null() || accuracies.is_null() || out.is_null() {
            return fail(HflStatus::NullPointer, "null argument");
        }
        let kind = match kind {
            k if k == HflRegressionKind::Logarithmic as i32 => RegressionKind::Logarithmic,
            k if k == HflRegressionKind::Linear as i32 => RegressionKind::Linear,
            k => return fail(HflStatus::InvalidArgument, format!("unknown regression kind {k}")),
        };
        let rounds = std::slice::from_raw_parts(rounds, len);
        let accuracies = std::slice::from_raw_parts(accuracies, len);
        let points: Vec<_> = rounds.iter().copied().zip(accuracies.iter().copied()).collect();
        match fit_regression(&points, kind) {
            Ok(f) => {
                *out = HflRegression { a: f.a, b: f.b };
                HflStatus::Ok
            }
            Err(e) => fail(HflStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Message for the last failed call on this thread, or an empty string.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn hfl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hfl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
