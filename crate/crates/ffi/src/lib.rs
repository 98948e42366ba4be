//! C interface to lincheck.
//!
//! Handles are opaque and owned by the caller once returned; free them with
//! the matching `lc_*_free`. Every entry point returns an `LcStatus`; on a
//! failure `lc_last_error` describes it until the next call on the same
//! thread. Strings returned through out-parameters are freed with
//! `lc_string_free`.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lincheck::executor::{check_behaviour_refinement, ExecError, Intervals, Mode};
use lincheck::histories::{from_json, linearisable_hw, to_json, History};
use lincheck::memstate::Value;
use lincheck::stacks::{build_program, simulate, Program, SimulateError, StackConfig, StackOracle};

/// Result of an FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LcStatus {
    Ok = 0,
    /// The check ran and the answer is negative.
    Negative = 1,
    /// Malformed input, such as bad JSON or an invalid configuration.
    Input = 2,
    /// Enumeration exceeded its state cap.
    Cap = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// Internal failure; see `lc_last_error`.
    Internal = 5,
}

/// A parsed history.
pub struct LcHistory(History);

/// A stack configuration: processes, value domain and operations per process.
pub struct LcConfig(StackConfig);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: LcStatus, msg: impl Into<String>) -> LcStatus {
    set_error(msg);
    status
}

fn exec_status(e: &ExecError) -> LcStatus {
    match e {
        ExecError::Capped(_) => LcStatus::Cap,
        _ => LcStatus::Input,
    }
}

/// Runs `f`, turning a panic into `Internal`.
fn guarded(f: impl FnOnce() -> LcStatus) -> LcStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LcStatus::Internal, "panic inside lincheck"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LcStatus> {
    if p.is_null() {
        return Err(fail(LcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LcStatus::Input, format!("{what} is not UTF-8")))
}

unsafe fn values_arg(p: *const i64, n: usize) -> Result<Vec<i64>, LcStatus> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(fail(LcStatus::NullPointer, "value array is null"));
    }
    Ok(std::slice::from_raw_parts(p, n).to_vec())
}

fn out_string(s: String, out: *mut *mut c_char) {
    if !out.is_null() {
        let c = CString::new(s.replace('\0', " ")).expect("no interior nul");
        unsafe { *out = c.into_raw() };
    }
}

fn mode(seed: u64, samples: usize) -> Mode {
    if samples == 0 {
        Mode::Exhaustive
    } else {
        Mode::Random { seed, samples }
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn lc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn lc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a history from its JSON text.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lc_history_from_json(
    json: *const c_char,
    out: *mut *mut LcHistory,
) -> LcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LcStatus::NullPointer, "out is null");
        }
        let text = match str_arg(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match from_json(text) {
            Ok(h) => {
                *out = Box::into_raw(Box::new(LcHistory(h)));
                LcStatus::Ok
            }
            Err(e) => fail(LcStatus::Input, e.to_string()),
        }
    })
}

/// Number of events in a history, or 0 for null.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lc_history_len(h: *const LcHistory) -> usize {
    h.as_ref().map_or(0, |h| h.0.len())
}

/// # Safety
/// `h` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_history_free(h: *mut LcHistory) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Checks a history against the sequential stack over the given values.
/// Returns `Ok` if linearisable and `Negative` if not. On `Ok` the witness
/// is written to `witness_json` when that is non-null.
///
/// # Safety
/// `h` must be a live handle, `valdom` must point to `n` values, and
/// `witness_json` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn lc_check_stack(
    h: *const LcHistory,
    valdom: *const i64,
    n: usize,
    witness_json: *mut *mut c_char,
) -> LcStatus {
    guarded(|| {
        let Some(h) = h.as_ref() else {
            return fail(LcStatus::NullPointer, "history is null");
        };
        let vals = match values_arg(valdom, n) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let vals: Vec<Value> = vals.into_iter().map(Value::Int).collect();
        match linearisable_hw(&h.0, &StackOracle, &vals) {
            Some(w) => {
                out_string(to_json(&w), witness_json);
                LcStatus::Ok
            }
            None => LcStatus::Negative,
        }
    })
}

/// Creates a stack configuration.
///
/// # Safety
/// `valdom` must point to `n` values and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn lc_config_new(
    procs: usize,
    valdom: *const i64,
    n: usize,
    ops_per_proc: u32,
    out: *mut *mut LcConfig,
) -> LcStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LcStatus::NullPointer, "out is null");
        }
        let vals = match values_arg(valdom, n) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let cfg = StackConfig::new(procs, vals, ops_per_proc);
        if let Err(e) = cfg.validate() {
            return fail(LcStatus::Input, e.to_string());
        }
        *out = Box::into_raw(Box::new(LcConfig(cfg)));
        LcStatus::Ok
    })
}

/// # Safety
/// `c` must be null or a live handle, which is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn lc_config_free(c: *mut LcConfig) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Generates streams of a stack program and checks the extracted
/// histories. `samples == 0` selects exhaustive enumeration. Returns
/// `Negative` if some history is not linearisable. The counts are written
/// to the non-null out-parameters.
///
/// # Safety
/// `cfg` must be a live handle, `program` a nul-terminated string and the
/// out-parameters null or valid.
#[no_mangle]
pub unsafe extern "C" fn lc_simulate(
    cfg: *const LcConfig,
    program: *const c_char,
    horizon: usize,
    seed: u64,
    samples: usize,
    streams: *mut usize,
    histories: *mut usize,
    non_linearisable: *mut usize,
) -> LcStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(LcStatus::NullPointer, "config is null");
        };
        let prog: Program = match str_arg(program, "program").map(str::parse) {
            Ok(Ok(p)) => p,
            Ok(Err(e)) => return fail(LcStatus::Input, e.to_string()),
            Err(s) => return s,
        };
        let gen = cfg.0.gen_config(horizon, mode(seed, samples));
        let sim = match simulate(prog, &cfg.0, &gen, &mut |_| {}) {
            Ok(s) => s,
            Err(SimulateError::Exec(e)) => return fail(exec_status(&e), e.to_string()),
            Err(e) => return fail(LcStatus::Input, e.to_string()),
        };
        for (p, v) in [
            (streams, sim.streams),
            (histories, sim.histories.len()),
            (non_linearisable, sim.non_linearisable.len()),
        ] {
            if !p.is_null() {
                *p = v;
            }
        }
        if sim.non_linearisable.is_empty() {
            LcStatus::Ok
        } else {
            LcStatus::Negative
        }
    })
}

/// Behaviour refinement of `abstract_program` by `concrete_program` over
/// every interval of the generated concrete streams. Returns `Ok` if it
/// holds and `Negative` if not. The JSON verdict, with a witness trace on
/// failure, is written to `verdict_json` when that is non-null.
///
/// # Safety
/// `cfg` must be a live handle, the names nul-terminated strings and
/// `verdict_json` null or valid.
#[no_mangle]
pub unsafe extern "C" fn lc_refine_behaviour(
    cfg: *const LcConfig,
    abstract_program: *const c_char,
    concrete_program: *const c_char,
    horizon: usize,
    seed: u64,
    samples: usize,
    verdict_json: *mut *mut c_char,
) -> LcStatus {
    guarded(|| {
        let Some(cfg) = cfg.as_ref() else {
            return fail(LcStatus::NullPointer, "config is null");
        };
        let mut cmds = Vec::new();
        for (p, what) in [
            (abstract_program, "abstract program"),
            (concrete_program, "concrete program"),
        ] {
            let prog: Program = match str_arg(p, what).map(str::parse) {
                Ok(Ok(p)) => p,
                Ok(Err(e)) => return fail(LcStatus::Input, e.to_string()),
                Err(s) => return s,
            };
            match build_program(prog, &cfg.0) {
                Ok(c) => cmds.push(c),
                Err(e) => return fail(LcStatus::Input, e.to_string()),
            }
        }
        let none = BTreeSet::new();
        let gen = cfg.0.gen_config(horizon, mode(seed, samples));
        let init = cfg.0.init_state();
        match check_behaviour_refinement(
            &cmds[0],
            &cmds[1],
            &[],
            &none,
            &none,
            &init,
            &gen,
            Intervals::All,
        ) {
            Ok(v) => {
                out_string(v.to_json(), verdict_json);
                if v.is_holds() {
                    LcStatus::Ok
                } else {
                    LcStatus::Negative
                }
            }
            Err(e) => fail(exec_status(&e), e.to_string()),
        }
    })
}
