//! C ABI over the basketlab game engine and statistics.
//!
//! Conventions:
//! - Every fallible function returns a [`BlStatus`]; on failure a message
//!   is available from [`bl_last_error`] on the same thread.
//! - Objects are opaque handles created by `*_new` functions and released
//!   with the matching `*_free`. Passing NULL to a `*_free` is a no-op.
//! - Strings returned as `char *` are owned by the caller and must be
//!   released with [`bl_string_free`].
//! - Panics never cross the boundary; they are reported as
//!   `BL_STATUS_INTERNAL`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use basketlab::analysis::{bh_adjust, idiosyncrasy, ks_two_sample};
use basketlab::game::{render_table, sample_game, Action, GameConfig, GameError, Phase, TrialState};
use basketlab::record::{AgentKind, AgentSummary, Materialized, TrialRecord, TrialSpec};
use basketlab::rr::OptimalNudger;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    IllegalAction = 4,
    NotFinished = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlPhase {
    DefaultOffer = 0,
    Playing = 1,
    LateSuggestion = 2,
    Done = 3,
}

impl From<Phase> for BlPhase {
    fn from(p: Phase) -> Self {
        match p {
            Phase::DefaultOffer => BlPhase::DefaultOffer,
            Phase::Playing => BlPhase::Playing,
            Phase::LateSuggestion => BlPhase::LateSuggestion,
            Phase::Done => BlPhase::Done,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BlOutcome {
    pub gross: i64,
    pub reveal_cost: i64,
    pub net: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlKsResult {
    pub d: f64,
    pub p_value: f64,
    pub n_x: usize,
    pub n_y: usize,
}

/// A trial in progress: the game, its nudge and the player's state.
pub struct BlTrial {
    spec: Option<TrialSpec>,
    materialized: Option<Materialized>,
    state: TrialState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(BlStatus, String);

impl From<GameError> for Failure {
    fn from(e: GameError) -> Self {
        let status = match e {
            GameError::NotFinished => BlStatus::NotFinished,
            GameError::AlreadyRevealed(_)
            | GameError::IllegalInPhase(_)
            | GameError::CellOutOfRange(_)
            | GameError::BasketOutOfRange { .. } => BlStatus::IllegalAction,
            _ => BlStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(e: impl ToString) -> Failure {
    Failure(BlStatus::InvalidArgument, e.to_string())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".to_string());
            BlStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(BlStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(BlStatus::InvalidUtf8, e.to_string()))
}

unsafe fn trial_mut<'a>(t: *mut BlTrial) -> Result<&'a mut BlTrial, Failure> {
    t.as_mut().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(BlStatus::NullPointer, "null output pointer".into()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(BlStatus::NullPointer, "null array argument".into()));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn to_c(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|e| Failure(BlStatus::Internal, e.to_string()))
}

/// Message of the last failure on this thread, or NULL. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn bl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn bl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn bl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// A control trial (no nudge) on a freshly sampled game.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_new_control(
    n_prizes: usize,
    n_baskets: usize,
    reveal_cost: u32,
    seed: u64,
    out: *mut *mut BlTrial,
) -> BlStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let config = GameConfig::new(n_prizes, n_baskets, reveal_cost)?;
        let game = sample_game(config, seed)?;
        *out = Box::into_raw(Box::new(BlTrial { spec: None, materialized: None, state: TrialState::control(game) }));
        Ok(())
    })
}

/// A trial from a JSON trial spec (as printed by `basketlab schedule`),
/// with its nudge applied.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_new_from_spec(spec_json: *const c_char, out: *mut *mut BlTrial) -> BlStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let spec: TrialSpec = serde_json::from_str(str_arg(spec_json)?).map_err(invalid)?;
        let materialized = spec.materialize(Some(&OptimalNudger::default())).map_err(invalid)?;
        let state = materialized.initial_state()?;
        *out = Box::into_raw(Box::new(BlTrial { spec: Some(spec), materialized: Some(materialized), state }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_trial_free(trial: *mut BlTrial) {
    if !trial.is_null() {
        drop(Box::from_raw(trial));
    }
}

/// Reveals a cell (zero-based indices) and writes its value.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_reveal(trial: *mut BlTrial, prize: usize, basket: usize, value: *mut u8) -> BlStatus {
    guard(|| {
        let t = trial_mut(trial)?;
        let value = out_ptr(value)?;
        let cell = basketlab::game::CellRef::new(prize, basket);
        t.state.apply(Action::Reveal { cell })?;
        *value = t.state.revealed_value(cell).unwrap_or(0);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_trial_select(trial: *mut BlTrial, basket: usize) -> BlStatus {
    guard(|| {
        trial_mut(trial)?.state.apply(Action::Select { basket })?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_trial_default_decision(trial: *mut BlTrial, accept: bool) -> BlStatus {
    guard(|| {
        trial_mut(trial)?.state.apply(Action::DefaultDecision { accept })?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_trial_phase(trial: *const BlTrial, phase: *mut BlPhase) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        *out_ptr(phase)? = t.state.phase().into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_trial_accumulated_cost(trial: *const BlTrial, cost: *mut u32) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        *out_ptr(cost)? = t.state.accumulated_cost();
        Ok(())
    })
}

/// Outcome of a finished trial; `BL_STATUS_NOT_FINISHED` before that.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_outcome(trial: *const BlTrial, outcome: *mut BlOutcome) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        let o = t.state.finalize()?;
        *out_ptr(outcome)? = BlOutcome { gross: o.gross, reveal_cost: o.reveal_cost, net: o.net };
        Ok(())
    })
}

/// The table text a player sees (hidden cells as `?`).
#[no_mangle]
pub unsafe extern "C" fn bl_trial_render_table(trial: *const BlTrial, text: *mut *mut c_char) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        *out_ptr(text)? = to_c(render_table(&t.state))?;
        Ok(())
    })
}

/// The player's observation as JSON; hidden cells are null.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_observation_json(trial: *const BlTrial, json: *mut *mut c_char) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        let s = serde_json::to_string(&t.state.observation()).map_err(|e| Failure(BlStatus::Internal, e.to_string()))?;
        *out_ptr(json)? = to_c(s)?;
        Ok(())
    })
}

/// The trial as a record JSON line (agent kind `human`). Only trials made
/// from a spec carry enough context to be recorded.
#[no_mangle]
pub unsafe extern "C" fn bl_trial_record_json(
    trial: *const BlTrial,
    run_id: *const c_char,
    participant_id: *const c_char,
    json: *mut *mut c_char,
) -> BlStatus {
    guard(|| {
        let t = trial.as_ref().ok_or_else(|| Failure(BlStatus::NullPointer, "null trial handle".into()))?;
        let (Some(spec), Some(m)) = (&t.spec, &t.materialized) else {
            return Err(invalid("trial was not created from a spec"));
        };
        let record = TrialRecord::from_state(
            spec.clone(),
            m,
            &t.state,
            AgentSummary::new(AgentKind::Human),
            str_arg(run_id)?,
            str_arg(participant_id)?,
        );
        let s = serde_json::to_string(&record).map_err(|e| Failure(BlStatus::Internal, e.to_string()))?;
        *out_ptr(json)? = to_c(s)?;
        Ok(())
    })
}

/// Checks a record JSON line: schema version, replayable events and the
/// stored outcome.
#[no_mangle]
pub unsafe extern "C" fn bl_record_validate(json: *const c_char) -> BlStatus {
    guard(|| {
        let record: TrialRecord = serde_json::from_str(str_arg(json)?).map_err(invalid)?;
        record.validate().map_err(invalid)
    })
}

#[no_mangle]
pub unsafe extern "C" fn bl_ks_two_sample(
    xs: *const f64,
    n_x: usize,
    ys: *const f64,
    n_y: usize,
    out: *mut BlKsResult,
) -> BlStatus {
    guard(|| {
        let r = ks_two_sample(slice_arg(xs, n_x)?, slice_arg(ys, n_y)?).map_err(invalid)?;
        *out_ptr(out)? = BlKsResult { d: r.d, p_value: r.p_value, n_x: r.n_x, n_y: r.n_y };
        Ok(())
    })
}

/// Benjamini–Hochberg adjustment of `n` p-values into `adjusted` (which
/// may alias `p_values`).
#[no_mangle]
pub unsafe extern "C" fn bl_bh_adjust(p_values: *const f64, n: usize, adjusted: *mut f64) -> BlStatus {
    guard(|| {
        let ps = slice_arg(p_values, n)?.to_vec();
        let adj = bh_adjust(&ps).map_err(invalid)?;
        if n > 0 {
            if adjusted.is_null() {
                return Err(Failure(BlStatus::NullPointer, "null output array".into()));
            }
            std::slice::from_raw_parts_mut(adjusted, n).copy_from_slice(&adj);
        }
        Ok(())
    })
}

/// L1 distance of the prize weights from the uniform vector.
#[no_mangle]
pub unsafe extern "C" fn bl_idiosyncrasy(weights: *const u32, n: usize, out: *mut f64) -> BlStatus {
    guard(|| {
        *out_ptr(out)? = idiosyncrasy(slice_arg(weights, n)?);
        Ok(())
    })
}
