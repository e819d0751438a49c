//! C ABI over the fixed-point discriminator.
//!
//! Models are opaque handles loaded from a bank file. Every fallible call
//! returns an [`RtdiscStatus`]; on failure, `rtdisc_last_error` returns a
//! message for the calling thread that stays valid until that thread's next
//! failing call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rtdisc::emu::{bank_load, cycle_report, CyclePolicy, QuantizedModel};
use rtdisc::fnn::Architecture;
use rtdisc::fxp;
use rtdisc::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtdiscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Checksum = 5,
    MissingQubit = 6,
    Range = 7,
    Overflow = 8,
    Panic = 9,
}

/// Result of one fixed-point inference.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RtdiscInference {
    /// 0 ground, 1 excited.
    pub state: u8,
    /// Sigmoid table output, raw Q10.17.
    pub prob_word: i64,
    /// Output-layer sum, raw Q10.17.
    pub logit: i64,
    pub lut_address: u32,
    /// Saturation events along the pipeline.
    pub overflows: u32,
}

/// Opaque model handle.
pub struct RtdiscModel {
    inner: QuantizedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> RtdiscStatus {
    match e {
        Error::Io { .. } => RtdiscStatus::Io,
        Error::Parse { .. } => RtdiscStatus::Parse,
        Error::Checksum { .. } => RtdiscStatus::Checksum,
        Error::MissingQubit(_) => RtdiscStatus::MissingQubit,
        Error::Range { .. } => RtdiscStatus::Range,
        Error::Overflow(_) => RtdiscStatus::Overflow,
        _ => RtdiscStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RtdiscStatus, String)>) -> RtdiscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtdiscStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RtdiscStatus::Panic
        }
    }
}

fn fail(e: Error) -> (RtdiscStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RtdiscStatus, String) {
    (RtdiscStatus::NullPointer, format!("{what} is null"))
}

/// Loads the model for `qubit` from the bank file at `path` (UTF-8, NUL
/// terminated). On success `*out` owns a handle to release with
/// `rtdisc_model_free`; on failure it is set to NULL.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_model_load(path: *const c_char, qubit: u8, out: *mut *mut RtdiscModel) -> RtdiscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RtdiscStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let inner = bank_load(Path::new(path), qubit).map_err(fail)?;
        *out = Box::into_raw(Box::new(RtdiscModel { inner }));
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from `rtdisc_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_model_free(model: *mut RtdiscModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_model_qubit(model: *const RtdiscModel, out: *mut u8) -> RtdiscStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        *out.as_mut().ok_or_else(|| null("out"))? = m.inner.qubit_id;
        Ok(())
    })
}

/// Classifies one accumulated shot given as integer I and Q accumulates.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_model_infer(
    model: *const RtdiscModel,
    raw_i: i64,
    raw_q: i64,
    out: *mut RtdiscInference,
) -> RtdiscStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let inf = m.inner.infer(raw_i, raw_q).map_err(fail)?;
        *out = RtdiscInference {
            state: inf.state.as_u8(),
            prob_word: inf.prob_word,
            logit: inf.trace.logit,
            lut_address: inf.trace.lut_address as u32,
            overflows: inf.trace.overflows,
        };
        Ok(())
    })
}

/// Shift-only normalization `((value - mu + 2^n) << 17) >> (n + 1)` as a raw
/// Q10.17 word.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_scale_shift(value: i64, n: u32, mu: i64, out: *mut i32) -> RtdiscStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = fxp::scale_shift(value, n, mu).map_err(fail)?.raw() as i32;
        Ok(())
    })
}

/// Truncating Q10.17 encoding of `x` as a raw word.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rtdisc_encode_q10_17(x: f64, out: *mut i32) -> RtdiscStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = fxp::encode_q10_17(x).map_err(fail)?.raw() as i32;
        Ok(())
    })
}

/// Pipeline latency of the default 2-8-4-1 network, in clock cycles.
#[no_mangle]
pub extern "C" fn rtdisc_default_total_cycles() -> u32 {
    cycle_report(&Architecture::default(), &CyclePolicy::default()).map_or(0, |r| r.total_cycles)
}

/// Message for the last failing call on this thread; empty if none.
#[no_mangle]
pub extern "C" fn rtdisc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
