//! C interface to the engagement solver and risk analytics.
//!
//! Models and solutions are opaque handles created and freed through this
//! API. Every function returns an [`HpStatus`]; on failure a description is
//! available from [`hp_last_error_message`] on the same thread. Policies
//! cross the boundary as arrays of action codes, one per state.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use honeynet_smdp::model::{ActionId, ModelError, Policy, SmdpModel, StateId};
use honeynet_smdp::risk::{self, RiskError};
use honeynet_smdp::solver::{self, SolverError};

pub const HP_ACTION_EJECT: u8 = 0;
pub const HP_ACTION_PASSIVE: u8 = 1;
pub const HP_ACTION_LOW_INTERACT: u8 = 2;
pub const HP_ACTION_HIGH_INTERACT: u8 = 3;
pub const HP_ACTION_ATTRACT: u8 = 4;

/// Returned by the role queries when the scenario has no such state.
pub const HP_NO_STATE: usize = usize::MAX;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Scenario failed to parse or validate.
    InvalidModel = 3,
    InvalidArgument = 4,
    /// Output buffer length does not match the state count.
    BufferSize = 5,
    NonConvergence = 6,
    Singular = 7,
    Unreachable = 8,
    Panic = 9,
}

/// A validated scenario.
pub struct HpModel {
    inner: SmdpModel,
}

/// Result of value iteration.
pub struct HpSolution {
    values: Vec<f64>,
    policy: Vec<u8>,
    iterations: usize,
    bellman_residual: f64,
}

struct Failure(HpStatus, String);

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure(HpStatus::InvalidModel, e.to_string())
    }
}

impl From<SolverError> for Failure {
    fn from(e: SolverError) -> Self {
        let status = match &e {
            SolverError::Model(_) => HpStatus::InvalidModel,
            SolverError::NonConvergence { .. } => HpStatus::NonConvergence,
            SolverError::Singular => HpStatus::Singular,
            SolverError::InvalidArgument(_) => HpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

impl From<RiskError> for Failure {
    fn from(e: RiskError) -> Self {
        let status = match &e {
            RiskError::Model(_) => HpStatus::InvalidModel,
            RiskError::Solver(SolverError::NonConvergence { .. }) => HpStatus::NonConvergence,
            RiskError::Singular | RiskError::Solver(SolverError::Singular) => HpStatus::Singular,
            RiskError::Unreachable { .. } => HpStatus::Unreachable,
            _ => HpStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_last_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

/// Runs `f`, records any failure or panic, and maps it to a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error(String::new());
            HpStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("internal panic: {msg}"));
            HpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(HpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(model: *const HpModel) -> Result<&'a SmdpModel, Failure> {
    model.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, expected: usize) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(null("output buffer"));
    }
    if len != expected {
        return Err(Failure(
            HpStatus::BufferSize,
            format!("output buffer holds {len} values, expected {expected}"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

unsafe fn read_policy(model: &SmdpModel, actions: *const u8, len: usize) -> Result<Policy, Failure> {
    if actions.is_null() {
        return Err(null("policy"));
    }
    let codes = std::slice::from_raw_parts(actions, len);
    let choice = codes
        .iter()
        .map(|&c| {
            ActionId::from_code(c).ok_or_else(|| Failure(HpStatus::InvalidArgument, format!("unknown action code {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Policy::new(model, choice)?)
}

fn state(model: &SmdpModel, s: usize) -> Result<StateId, Failure> {
    if s < model.state_count() {
        Ok(StateId(s))
    } else {
        Err(Failure(HpStatus::InvalidArgument, format!("state {s} out of range")))
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// excluding the terminator; `buf` may be null to query it.
#[no_mangle]
pub unsafe extern "C" fn hp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf.cast::<u8>(), n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Parses and validates a scenario document. On success `*out` owns a new
/// handle to release with [`hp_model_free`].
#[no_mangle]
pub unsafe extern "C" fn hp_model_from_json(json: *const c_char, out: *mut *mut HpModel) -> HpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(HpStatus::InvalidUtf8, e.to_string()))?;
        let inner = honeynet_smdp::load_scenario(text)?;
        *out = Box::into_raw(Box::new(HpModel { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hp_model_free(model: *mut HpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of states, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hp_model_state_count(model: *const HpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.state_count())
}

/// Index of the normal zone, or [`HP_NO_STATE`].
#[no_mangle]
pub unsafe extern "C" fn hp_model_normal(model: *const HpModel) -> usize {
    model.as_ref().and_then(|m| m.inner.normal()).map_or(HP_NO_STATE, |s| s.0)
}

/// Index of the scenario's target honeypot, or [`HP_NO_STATE`].
#[no_mangle]
pub unsafe extern "C" fn hp_model_target(model: *const HpModel) -> usize {
    model.as_ref().and_then(|m| m.inner.target()).map_or(HP_NO_STATE, |s| s.0)
}

/// Index of the absorbing state, or [`HP_NO_STATE`] for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hp_model_absorbing(model: *const HpModel) -> usize {
    model.as_ref().map_or(HP_NO_STATE, |m| m.inner.absorbing().0)
}

/// Value iteration to Bellman residual `tol`. On success `*out` owns a new
/// solution handle to release with [`hp_solution_free`].
#[no_mangle]
pub unsafe extern "C" fn hp_solve(
    model: *const HpModel,
    tol: f64,
    max_iter: usize,
    out: *mut *mut HpSolution,
) -> HpStatus {
    guard(|| {
        let model = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let sol = solver::value_iteration(model, tol, max_iter)?;
        *out = Box::into_raw(Box::new(HpSolution {
            values: sol.values.values.clone(),
            policy: sol.policy.actions().iter().map(|a| a.code()).collect(),
            iterations: sol.iterations,
            bellman_residual: sol.bellman_residual,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hp_solution_free(solution: *mut HpSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Copies the optimal values; `len` must equal the state count.
#[no_mangle]
pub unsafe extern "C" fn hp_solution_values(solution: *const HpSolution, out: *mut f64, len: usize) -> HpStatus {
    guard(|| {
        let sol = solution.as_ref().ok_or_else(|| null("solution"))?;
        out_slice(out, len, sol.values.len())?.copy_from_slice(&sol.values);
        Ok(())
    })
}

/// Copies the optimal action codes; `len` must equal the state count.
#[no_mangle]
pub unsafe extern "C" fn hp_solution_policy(solution: *const HpSolution, out: *mut u8, len: usize) -> HpStatus {
    guard(|| {
        let sol = solution.as_ref().ok_or_else(|| null("solution"))?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        if len != sol.policy.len() {
            return Err(Failure(
                HpStatus::BufferSize,
                format!("output buffer holds {len} codes, expected {}", sol.policy.len()),
            ));
        }
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&sol.policy);
        Ok(())
    })
}

/// Sweeps performed, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hp_solution_iterations(solution: *const HpSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.iterations)
}

/// Sup-norm Bellman residual of the returned values, NaN for a null handle.
#[no_mangle]
pub unsafe extern "C" fn hp_solution_residual(solution: *const HpSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.bellman_residual)
}

/// Exact discounted value of a stationary policy.
#[no_mangle]
pub unsafe extern "C" fn hp_policy_evaluate(
    model: *const HpModel,
    actions: *const u8,
    actions_len: usize,
    out: *mut f64,
    len: usize,
) -> HpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let policy = read_policy(model, actions, actions_len)?;
        let values = solver::policy_evaluation(model, &policy)?;
        out_slice(out, len, model.state_count())?.copy_from_slice(&values.values);
        Ok(())
    })
}

/// Occupancy distribution at time `t` from a point mass on `start`.
#[no_mangle]
pub unsafe extern "C" fn hp_occupancy(
    model: *const HpModel,
    actions: *const u8,
    actions_len: usize,
    start: usize,
    t: f64,
    out: *mut f64,
    len: usize,
) -> HpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let policy = read_policy(model, actions, actions_len)?;
        let start = state(model, start)?;
        let gen = risk::build_generator(model, &policy)?;
        let curve = risk::transient_occupancy(&gen, &risk::point_mass(model.state_count(), start), &[t])?;
        out_slice(out, len, model.state_count())?.copy_from_slice(&curve.dist[0]);
        Ok(())
    })
}

/// Mean first-passage time from every state into `target`. Entries are
/// `INFINITY` where passage is not certain.
#[no_mangle]
pub unsafe extern "C" fn hp_mfpt(
    model: *const HpModel,
    actions: *const u8,
    actions_len: usize,
    target: usize,
    out: *mut f64,
    len: usize,
) -> HpStatus {
    guard(|| {
        let model = model_ref(model)?;
        let policy = read_policy(model, actions, actions_len)?;
        let target = state(model, target)?;
        let gen = risk::build_generator(model, &policy)?;
        let times = risk::mfpt(&gen, &BTreeSet::from([target]))?;
        out_slice(out, len, model.state_count())?.copy_from_slice(&times.times);
        Ok(())
    })
}

/// Probability that the first passage from `source` to `target` finishes
/// within its mean, together with that mean.
#[no_mangle]
pub unsafe extern "C" fn hp_attraction_efficiency(
    model: *const HpModel,
    actions: *const u8,
    actions_len: usize,
    source: usize,
    target: usize,
    threshold: *mut f64,
    probability: *mut f64,
) -> HpStatus {
    guard(|| {
        let model = model_ref(model)?;
        if threshold.is_null() || probability.is_null() {
            return Err(null("output pointer"));
        }
        let policy = read_policy(model, actions, actions_len)?;
        let eff = risk::attraction_efficiency(model, &policy, state(model, source)?, state(model, target)?)?;
        *threshold = eff.threshold;
        *probability = eff.probability;
        Ok(())
    })
}
