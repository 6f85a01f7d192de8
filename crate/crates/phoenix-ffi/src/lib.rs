//! C ABI over the detector: checkpoint loading, feature-file reading, and
//! per-utterance scoring through opaque handles and integer error codes.
//!
//! Conventions:
//! - Every fallible call returns a [`PhoenixStatus`]; 0 is success.
//! - Output parameters are written only on success.
//! - Handles are created and released by this library only
//!   ([`phoenix_model_free`], [`phoenix_features_free`]).
//! - The per-thread message from [`phoenix_last_error`] describes the most
//!   recent failure on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use phoenix_core::data::{read_feature_file, FeatureSequence};
use phoenix_core::error::Error;
use phoenix_core::trainer::TrainedModel;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhoenixStatus {
    Ok = 0,
    /// I/O or other environment failure.
    Io = 1,
    /// Invalid configuration or argument.
    Config = 2,
    /// Malformed file (feature file or checkpoint).
    Format = 3,
    /// Non-finite numerics.
    Numeric = 4,
    /// Shape mismatch between model and data.
    Structure = 5,
    /// Null pointer or panic across the boundary.
    Invalid = 6,
}

fn status_of(e: &Error) -> PhoenixStatus {
    match e {
        Error::Io(_) => PhoenixStatus::Io,
        Error::Config(_) => PhoenixStatus::Config,
        Error::Format { .. } => PhoenixStatus::Format,
        Error::Numeric(_) => PhoenixStatus::Numeric,
        Error::Structure(_) => PhoenixStatus::Structure,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// A loaded checkpoint ready for scoring (opaque).
pub struct PhoenixModel {
    inner: TrainedModel,
}

/// A feature sequence read from an `.hcfd` file (opaque).
pub struct PhoenixFeatures {
    inner: FeatureSequence,
}

/// Scores for one utterance.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PhoenixScore {
    /// P(fake) in [0, 1].
    pub p_fake: f64,
    /// Aggregated real-class logit S₋.
    pub s_neg: f64,
    /// Aggregated fake-class logit S₊.
    pub s_pos: f64,
    /// 1 when p_fake ≥ the checkpoint's validation-selected threshold.
    pub predicted_fake: i32,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PhoenixStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(PhoenixStatus::Invalid);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        PhoenixStatus::Invalid
    })
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn phoenix_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn phoenix_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Loads a checkpoint produced by `phoenix train`.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_load(
    path: *const c_char,
    out: *mut *mut PhoenixModel,
) -> PhoenixStatus {
    if out.is_null() {
        set_error("out handle is null");
        return PhoenixStatus::Invalid;
    }
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let loaded = catch_unwind(AssertUnwindSafe(|| TrainedModel::load(Path::new(path))));
    match loaded {
        Ok(Ok(inner)) => {
            *out = Box::into_raw(Box::new(PhoenixModel { inner }));
            PhoenixStatus::Ok
        }
        Ok(Err(e)) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic while loading checkpoint");
            PhoenixStatus::Invalid
        }
    }
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `model` must come from [`phoenix_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_free(model: *mut PhoenixModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input feature dimension D the model expects.
///
/// # Safety
/// `model` must be a live handle from [`phoenix_model_load`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_feat_dim(model: *const PhoenixModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.model.cfg.feat_dim as u32
}

/// The checkpoint's validation-selected decision threshold.
///
/// # Safety
/// `model` must be a live handle from [`phoenix_model_load`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_threshold(model: *const PhoenixModel) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    (*model).inner.threshold
}

/// Scores one utterance given as a row-major T×D f32 buffer.
///
/// # Safety
/// `features` must point to `t · d` readable floats; `model` must be a
/// live handle; `out` must point to writable storage for one score.
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_score(
    model: *const PhoenixModel,
    features: *const f32,
    t: u32,
    d: u32,
    out: *mut PhoenixScore,
) -> PhoenixStatus {
    if model.is_null() || features.is_null() || out.is_null() {
        set_error("null argument to phoenix_model_score");
        return PhoenixStatus::Invalid;
    }
    if t == 0 {
        set_error("t must be ≥ 1");
        return PhoenixStatus::Structure;
    }
    let model = &(*model).inner;
    if d as usize != model.model.cfg.feat_dim {
        set_error(&format!(
            "feature dimension mismatch: model expects D={}, got D={d}",
            model.model.cfg.feat_dim
        ));
        return PhoenixStatus::Structure;
    }
    let n = t as usize * d as usize;
    let slice = std::slice::from_raw_parts(features, n);
    if slice.iter().any(|v| !v.is_finite()) {
        set_error("feature buffer contains non-finite values");
        return PhoenixStatus::Numeric;
    }
    let feats: Vec<f64> = slice.iter().map(|&v| v as f64).collect();
    let result = catch_unwind(AssertUnwindSafe(|| model.model.score(&feats, t as usize)));
    match result {
        Ok(s) => {
            *out = PhoenixScore {
                p_fake: s.p_fake,
                s_neg: s.s_neg,
                s_pos: s.s_pos,
                predicted_fake: (s.p_fake >= model.threshold) as i32,
            };
            PhoenixStatus::Ok
        }
        Err(_) => {
            set_error("internal panic while scoring");
            PhoenixStatus::Invalid
        }
    }
}

/// Reads an `.hcfd` feature file into an opaque handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string; `out` must point to
/// writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn phoenix_features_read(
    path: *const c_char,
    out: *mut *mut PhoenixFeatures,
) -> PhoenixStatus {
    if out.is_null() {
        set_error("out handle is null");
        return PhoenixStatus::Invalid;
    }
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match read_feature_file(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(PhoenixFeatures { inner }));
            PhoenixStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            status_of(&e)
        }
    }
}

/// Frame count of a loaded feature sequence.
///
/// # Safety
/// `features` must be a live handle from [`phoenix_features_read`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_features_t(features: *const PhoenixFeatures) -> u32 {
    if features.is_null() {
        return 0;
    }
    (*features).inner.t as u32
}

/// Feature dimension of a loaded feature sequence.
///
/// # Safety
/// `features` must be a live handle from [`phoenix_features_read`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_features_dim(features: *const PhoenixFeatures) -> u32 {
    if features.is_null() {
        return 0;
    }
    (*features).inner.d as u32
}

/// Borrowed pointer to the row-major T×D payload, valid while the handle
/// lives.
///
/// # Safety
/// `features` must be a live handle from [`phoenix_features_read`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_features_data(features: *const PhoenixFeatures) -> *const f32 {
    if features.is_null() {
        return ptr::null();
    }
    (*features).inner.data.as_ptr()
}

/// Convenience: read a feature file and score it in one call.
///
/// # Safety
/// Same requirements as [`phoenix_features_read`] and
/// [`phoenix_model_score`].
#[no_mangle]
pub unsafe extern "C" fn phoenix_model_score_file(
    model: *const PhoenixModel,
    path: *const c_char,
    out: *mut PhoenixScore,
) -> PhoenixStatus {
    let mut features: *mut PhoenixFeatures = ptr::null_mut();
    let status = phoenix_features_read(path, &mut features);
    if status != PhoenixStatus::Ok {
        return status;
    }
    let f = &(*features).inner;
    let status = phoenix_model_score(model, f.data.as_ptr(), f.t as u32, f.d as u32, out);
    phoenix_features_free(features);
    status
}

/// Releases a features handle. Null is a no-op.
///
/// # Safety
/// `features` must come from [`phoenix_features_read`] and not be freed
/// twice.
#[no_mangle]
pub unsafe extern "C" fn phoenix_features_free(features: *mut PhoenixFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}
