//! C ABI over the updatelab core.
//!
//! Boards, banks and labs are opaque heap handles released with their
//! `*_free` function. Every fallible call returns a [`UlStatus`]; on failure
//! `ul_last_error` describes the problem for the calling thread. Strings
//! returned through out-pointers are owned by the caller and released with
//! `ul_string_free`. Structured values cross the boundary as JSON.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use updatelab::gridworld::{generate_board, rollout, BoardSpec, GenParams, Trajectory};
use updatelab::policy::{default_bank, PolicyBank, PolicyId, DEFAULT_GAMMA};
use updatelab::reward::{self, FeatureCounts, PreferenceVector, EVALUATION_WEIGHTS};
use updatelab::session::{self, Lab, SessionConfig, SessionRecord};
use updatelab::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Usage = 4,
    Generation = 5,
    Resource = 6,
    Data = 7,
    State = 8,
    NotFound = 9,
    Io = 10,
    Json = 11,
    Panic = 99,
}

/// Five preference weights: blue, green, red, lava entry, per step.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UlWeights {
    pub blue: f64,
    pub green: f64,
    pub red: f64,
    pub lava: f64,
    pub step: f64,
}

/// Event counts of one episode.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UlFeatureCounts {
    pub blue: u32,
    pub green: u32,
    pub red: u32,
    pub lava: u32,
    pub steps: u32,
}

pub struct UlBoard(BoardSpec);

pub struct UlBank(PolicyBank);

pub struct UlLab(Lab);

impl From<UlWeights> for PreferenceVector {
    fn from(w: UlWeights) -> Self {
        PreferenceVector::new(w.blue, w.green, w.red, w.lava, w.step)
    }
}

impl From<PreferenceVector> for UlWeights {
    fn from(w: PreferenceVector) -> Self {
        UlWeights { blue: w.blue, green: w.green, red: w.red, lava: w.lava, step: w.step }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(UlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_) => UlStatus::Validation,
            Error::Usage(_) => UlStatus::Usage,
            Error::Generation { .. } => UlStatus::Generation,
            Error::Resource { .. } => UlStatus::Resource,
            Error::Data(_) => UlStatus::Data,
            Error::State(_) => UlStatus::State,
            Error::NotFound(_) => UlStatus::NotFound,
            Error::Io { .. } => UlStatus::Io,
            Error::Json(_) => UlStatus::Json,
        };
        Failure(status, e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

type FfiResult<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> UlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            UlStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure(UlStatus::NullArgument, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(UlStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(UlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(Failure(UlStatus::NullArgument, "output pointer is null".into()));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult {
    let c = CString::new(s).map_err(|_| Failure(UlStatus::Json, "output contains a nul byte".into()))?;
    put(out, c.into_raw())
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ul_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn ul_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[no_mangle]
pub extern "C" fn ul_evaluation_weights() -> UlWeights {
    EVALUATION_WEIGHTS.into()
}

#[no_mangle]
pub unsafe extern "C" fn ul_score(counts: *const UlFeatureCounts, weights: *const UlWeights, out: *mut f64) -> UlStatus {
    guard(|| {
        let c = get(counts, "counts")?;
        let w: PreferenceVector = (*get(weights, "weights")?).into();
        put(out, reward::score(&FeatureCounts::new(c.blue, c.green, c.red, c.lava, c.steps), &w))
    })
}

/// Score of a trajectory given as JSON.
#[no_mangle]
pub unsafe extern "C" fn ul_trajectory_score(
    trajectory_json: *const c_char,
    weights: *const UlWeights,
    out: *mut f64,
) -> UlStatus {
    guard(|| {
        let t: Trajectory = serde_json::from_str(text(trajectory_json, "trajectory_json")?)?;
        let w: PreferenceVector = (*get(weights, "weights")?).into();
        put(out, reward::trajectory_score(&t, &w))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ul_board_from_json(json: *const c_char, out: *mut *mut UlBoard) -> UlStatus {
    guard(|| {
        let b = BoardSpec::from_json(text(json, "json")?)?;
        put(out, Box::into_raw(Box::new(UlBoard(b))))
    })
}

/// Generates a board with the default parameters.
#[no_mangle]
pub unsafe extern "C" fn ul_board_generate(seed: u64, out: *mut *mut UlBoard) -> UlStatus {
    guard(|| {
        let b = generate_board(seed, &GenParams::default())?;
        put(out, Box::into_raw(Box::new(UlBoard(b))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ul_board_to_json(board: *const UlBoard, out: *mut *mut c_char) -> UlStatus {
    guard(|| put_string(out, get(board, "board")?.0.to_json()))
}

#[no_mangle]
pub unsafe extern "C" fn ul_board_free(board: *mut UlBoard) {
    if !board.is_null() {
        drop(Box::from_raw(board));
    }
}

/// The six default policies, fully connected.
#[no_mangle]
pub unsafe extern "C" fn ul_bank_default(out: *mut *mut UlBank) -> UlStatus {
    guard(|| put(out, Box::into_raw(Box::new(UlBank(default_bank(DEFAULT_GAMMA)?)))))
}

#[no_mangle]
pub unsafe extern "C" fn ul_bank_from_json(json: *const c_char, out: *mut *mut UlBank) -> UlStatus {
    guard(|| {
        let bank = PolicyBank::from_manifest(serde_json::from_str(text(json, "json")?)?)?;
        put(out, Box::into_raw(Box::new(UlBank(bank))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ul_bank_to_json(bank: *const UlBank, out: *mut *mut c_char) -> UlStatus {
    guard(|| put_string(out, serde_json::to_string(&get(bank, "bank")?.0.manifest())?))
}

/// Number of policies, or 0 for NULL.
#[no_mangle]
pub unsafe extern "C" fn ul_bank_len(bank: *const UlBank) -> usize {
    bank.as_ref().map_or(0, |b| b.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn ul_bank_free(bank: *mut UlBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Runs one bank policy on a board; writes the trajectory as JSON.
#[no_mangle]
pub unsafe extern "C" fn ul_rollout_json(
    bank: *const UlBank,
    policy_id: u32,
    board: *const UlBoard,
    out: *mut *mut c_char,
) -> UlStatus {
    guard(|| {
        let p = get(bank, "bank")?.0.get(PolicyId(policy_id))?;
        let t = rollout(p.as_ref(), &get(board, "board")?.0)?;
        put_string(out, serde_json::to_string(&t)?)
    })
}

/// Mean score of a bank policy over `n` boards.
#[no_mangle]
pub unsafe extern "C" fn ul_policy_value(
    bank: *const UlBank,
    policy_id: u32,
    boards: *const *const UlBoard,
    n: usize,
    weights: *const UlWeights,
    out: *mut f64,
) -> UlStatus {
    guard(|| {
        let p = get(bank, "bank")?.0.get(PolicyId(policy_id))?;
        let handles: &[*const UlBoard] = if n == 0 {
            &[]
        } else {
            std::slice::from_raw_parts(get(boards, "boards")?, n)
        };
        let specs = handles
            .iter()
            .map(|&b| get(b, "board").map(|b| b.0.clone()))
            .collect::<FfiResult<Vec<_>>>()?;
        let w: PreferenceVector = (*get(weights, "weights")?).into();
        put(out, reward::policy_value(p.as_ref(), &specs, &w)?)
    })
}

/// Default bank, pool and feedback boards generated from `seed`.
#[no_mangle]
pub unsafe extern "C" fn ul_lab_generate(seed: u64, out: *mut *mut UlLab) -> UlStatus {
    guard(|| {
        let lab = Lab::generate(seed, &GenParams::default())?;
        put(out, Box::into_raw(Box::new(UlLab(lab))))
    })
}

#[no_mangle]
pub unsafe extern "C" fn ul_lab_free(lab: *mut UlLab) {
    if !lab.is_null() {
        drop(Box::from_raw(lab));
    }
}

/// Pool-mean evaluation score of a bank policy.
#[no_mangle]
pub unsafe extern "C" fn ul_lab_pool_value(lab: *const UlLab, policy_id: u32, out: *mut f64) -> UlStatus {
    guard(|| put(out, get(lab, "lab")?.0.pool_value(PolicyId(policy_id))?))
}

/// Runs a simulated session described by a session config JSON; writes
/// the session record as JSON.
#[no_mangle]
pub unsafe extern "C" fn ul_run_session(
    lab: *const UlLab,
    session_id: *const c_char,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> UlStatus {
    guard(|| {
        let config: SessionConfig = serde_json::from_str(text(config_json, "config_json")?)?;
        let id = text(session_id, "session_id")?;
        let record = session::run_session(&get(lab, "lab")?.0, id, config)?;
        put_string(out, serde_json::to_string(&record)?)
    })
}

/// Re-derives a session record; `matches` is set to whether it agrees.
#[no_mangle]
pub unsafe extern "C" fn ul_replay_verify(
    lab: *const UlLab,
    record_json: *const c_char,
    matches: *mut bool,
) -> UlStatus {
    guard(|| {
        let record: SessionRecord = serde_json::from_str(text(record_json, "record_json")?)?;
        let outcome = session::replay(&get(lab, "lab")?.0, &record)?;
        if let Some(d) = &outcome.detail {
            set_error(d.clone());
        }
        put(matches, outcome.matches)
    })
}
