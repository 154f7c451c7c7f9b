//! C ABI for the tracker: opaque session handles, integer status codes,
//! and a thread-local last-error message. All functions are
//! panic-isolated; a panic surfaces as `CAJMU_STATUS_PANIC` instead of
//! unwinding across the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use cajmu::config::{Checkpoint, RunConfig};
use cajmu::error::Error;
use cajmu::online::{TrackerSession, Variant};
use cajmu::tensor::TensorData;
use cajmu::tracker::BBox;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum CajmuStatus {
    CajmuStatusOk = 0,
    CajmuStatusVerification = 1,
    CajmuStatusInvalid = 2,
    CajmuStatusMissing = 3,
    CajmuStatusIncompatible = 4,
    CajmuStatusNullArgument = 5,
    CajmuStatusBadUtf8 = 6,
    CajmuStatusPanic = 7,
}

use CajmuStatus::*;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> CajmuStatus {
    match err.exit_code() {
        1 => CajmuStatusVerification,
        3 => CajmuStatusMissing,
        4 => CajmuStatusIncompatible,
        _ => CajmuStatusInvalid,
    }
}

fn guarded<F: FnOnce() -> CajmuStatus>(f: F) -> CajmuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            CajmuStatusPanic
        }
    }
}

/// Opaque tracker handle: loaded checkpoint plus, once initialized, a live
/// tracking session.
pub struct CajmuTracker {
    config: RunConfig,
    checkpoint: Checkpoint,
    variant: Variant,
    seed: u64,
    session: Option<TrackerSession>,
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
///
/// # Safety
/// The returned pointer must not be freed.
#[no_mangle]
pub unsafe extern "C" fn cajmu_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

unsafe fn read_str<'a>(ptr: *const c_char) -> Result<&'a str, CajmuStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(CajmuStatusNullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        CajmuStatusBadUtf8
    })
}

/// Create a tracker from a checkpoint file. `config_json` may be null for
/// defaults; `variant` is one of "identity", "cls-only", "reg-only",
/// "joint", "full".
///
/// # Safety
/// `checkpoint_path` and `variant` must be valid NUL-terminated strings;
/// `config_json` may be null; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cajmu_tracker_new(
    checkpoint_path: *const c_char,
    config_json: *const c_char,
    variant: *const c_char,
    seed: u64,
    out: *mut *mut CajmuTracker,
) -> CajmuStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null output pointer");
            return CajmuStatusNullArgument;
        }
        let path = match read_str(checkpoint_path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let variant_name = match read_str(variant) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let config = if config_json.is_null() {
            RunConfig::default()
        } else {
            let text = match read_str(config_json) {
                Ok(s) => s,
                Err(st) => return st,
            };
            match RunConfig::from_json(text) {
                Ok(c) => c,
                Err(e) => {
                    set_error(&e.to_string());
                    return status_of(&e);
                }
            }
        };
        let checkpoint = match Checkpoint::load(Path::new(path)) {
            Ok(c) => c,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        let variant = match Variant::parse(variant_name) {
            Ok(v) => v,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        };
        let conv2 = match checkpoint.params.get("backbone.conv2") {
            Ok(t) => t,
            Err(e) => {
                set_error(&e.to_string());
                return CajmuStatusIncompatible;
            }
        };
        if conv2.shape[0] != config.tracker.c_cls {
            set_error("checkpoint channel widths do not match the config");
            return CajmuStatusIncompatible;
        }
        let tracker = Box::new(CajmuTracker {
            config,
            checkpoint,
            variant,
            seed,
            session: None,
        });
        *out = Box::into_raw(tracker);
        CajmuStatusOk
    })
}

unsafe fn read_frame(
    frame: *const f64,
    channels: usize,
    height: usize,
    width: usize,
) -> Result<TensorData, CajmuStatus> {
    if frame.is_null() {
        set_error("null frame pointer");
        return Err(CajmuStatusNullArgument);
    }
    let n = channels * height * width;
    let values = std::slice::from_raw_parts(frame, n).to_vec();
    TensorData::new(vec![channels, height, width], values).map_err(|e| {
        set_error(&e.to_string());
        CajmuStatusInvalid
    })
}

/// Initialize tracking on the first frame with a ground-truth box given as
/// (center-x, center-y, width, height) in pixels. Frame data is row-major
/// channel-height-width, 64-bit floats.
///
/// # Safety
/// `tracker` must be a live handle; `frame` must point to
/// `channels * height * width` doubles.
#[no_mangle]
pub unsafe extern "C" fn cajmu_tracker_init(
    tracker: *mut CajmuTracker,
    frame: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
) -> CajmuStatus {
    guarded(|| {
        let Some(t) = tracker.as_mut() else {
            set_error("null tracker handle");
            return CajmuStatusNullArgument;
        };
        let frame = match read_frame(frame, channels, height, width) {
            Ok(f) => f,
            Err(st) => return st,
        };
        let box_ = match BBox::new(cx, cy, w, h) {
            Ok(b) => b,
            Err(e) => {
                set_error(&e.to_string());
                return CajmuStatusInvalid;
            }
        };
        match TrackerSession::init(
            &t.checkpoint.params,
            &frame,
            &box_,
            t.variant,
            &t.config.tracker,
            &t.config.meta,
            t.seed,
        ) {
            Ok(session) => {
                t.session = Some(session);
                CajmuStatusOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Track one frame. Writes (center-x, center-y, width, height) into
/// `out_box` and the peak score into `out_confidence` (either may be null
/// if unwanted).
///
/// # Safety
/// `tracker` must be a live, initialized handle; `frame` must point to
/// `channels * height * width` doubles; `out_box`, when non-null, must
/// point to at least 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn cajmu_tracker_track(
    tracker: *mut CajmuTracker,
    frame: *const f64,
    channels: usize,
    height: usize,
    width: usize,
    out_box: *mut f64,
    out_confidence: *mut f64,
) -> CajmuStatus {
    guarded(|| {
        let Some(t) = tracker.as_mut() else {
            set_error("null tracker handle");
            return CajmuStatusNullArgument;
        };
        let Some(session) = t.session.as_mut() else {
            set_error("tracker not initialized; call cajmu_tracker_init first");
            return CajmuStatusMissing;
        };
        let frame = match read_frame(frame, channels, height, width) {
            Ok(f) => f,
            Err(st) => return st,
        };
        match session.track(&frame) {
            Ok(r) => {
                if !out_box.is_null() {
                    let slot = std::slice::from_raw_parts_mut(out_box, 4);
                    slot.copy_from_slice(&[r.bbox.cx, r.bbox.cy, r.bbox.w, r.bbox.h]);
                }
                if !out_confidence.is_null() {
                    *out_confidence = r.confidence;
                }
                CajmuStatusOk
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Destroy a tracker handle. Null is a no-op.
///
/// # Safety
/// `tracker` must be null or a pointer returned by `cajmu_tracker_new`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn cajmu_tracker_free(tracker: *mut CajmuTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}
