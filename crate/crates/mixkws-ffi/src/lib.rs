//! C ABI for the mixkws toolkit: opaque handles, integer status codes and a
//! thread-local error message. The header is generated by cbindgen into
//! `include/mixkws.h`.
//!
//! Conventions:
//! - Constructors write a newly allocated handle through an out-pointer and
//!   return [`MixkwsStatus::Ok`] on success; the caller frees handles with
//!   the matching `*_free` function.
//! - On failure the out-pointer is left untouched and
//!   [`mixkws_last_error_message`] describes the error until the next
//!   failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::path::PathBuf;

use libc::{c_char, size_t};

use mixkws::error::Error;
use mixkws::eval::{compute_eer, DetectionEntry, DetectionLog};
use mixkws::features::{fbank, FeatureMatrix};
use mixkws::model::{checkpoint, detection_scores, ModelState};
use mixkws::signal::{convex_mix, load_wav, save_wav, synth_keyword, Waveform};

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixkwsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Utf8 = 3,
    Io = 4,
    Format = 5,
    Numeric = 6,
    Degenerate = 7,
}

/// Opaque mono waveform handle.
pub struct MixkwsWaveform(Waveform);

/// Opaque log-mel feature matrix handle.
pub struct MixkwsFeatures(FeatureMatrix);

/// Opaque trained model handle.
pub struct MixkwsModel(ModelState);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> MixkwsStatus {
    match err {
        Error::Io { .. } => MixkwsStatus::Io,
        Error::WavFormat { .. } | Error::Checkpoint(_) | Error::Json(_) => MixkwsStatus::Format,
        Error::NonFinite(_) | Error::Diverged { .. } => MixkwsStatus::Numeric,
        Error::DegenerateLog(_) => MixkwsStatus::Degenerate,
        _ => MixkwsStatus::InvalidArgument,
    }
}

fn fail(err: &Error) -> MixkwsStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn fail_with(status: MixkwsStatus, message: &str) -> MixkwsStatus {
    set_error(message);
    status
}

/// Last error message for this thread; empty string when no error has been
/// recorded. The pointer stays valid until the next failing call on the
/// same thread.
#[no_mangle]
pub extern "C" fn mixkws_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static name of a status code (e.g. "ok", "invalid-argument").
#[no_mangle]
pub extern "C" fn mixkws_status_name(status: MixkwsStatus) -> *const c_char {
    let name: &'static CStr = match status {
        MixkwsStatus::Ok => c"ok",
        MixkwsStatus::NullPointer => c"null-pointer",
        MixkwsStatus::InvalidArgument => c"invalid-argument",
        MixkwsStatus::Utf8 => c"utf8",
        MixkwsStatus::Io => c"io",
        MixkwsStatus::Format => c"format",
        MixkwsStatus::Numeric => c"numeric",
        MixkwsStatus::Degenerate => c"degenerate",
    };
    name.as_ptr()
}

unsafe fn path_from(ptr: *const c_char) -> Result<PathBuf, MixkwsStatus> {
    if ptr.is_null() {
        return Err(fail_with(MixkwsStatus::NullPointer, "path is null"));
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail_with(MixkwsStatus::Utf8, "path is not valid UTF-8")),
    }
}

/// Build a waveform from raw samples in [-1, 1].
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be a valid
/// pointer to a waveform handle slot.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_from_samples(
    samples: *const f64,
    len: size_t,
    sample_rate_hz: u32,
    out: *mut *mut MixkwsWaveform,
) -> MixkwsStatus {
    if samples.is_null() || out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    let data = std::slice::from_raw_parts(samples, len).to_vec();
    match Waveform::new(data, sample_rate_hz) {
        Ok(wave) => {
            *out = Box::into_raw(Box::new(MixkwsWaveform(wave)));
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Load a 16-bit PCM mono WAV file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_load(
    path: *const c_char,
    out: *mut *mut MixkwsWaveform,
) -> MixkwsStatus {
    if out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "out pointer is null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match load_wav(&path) {
        Ok(wave) => {
            *out = Box::into_raw(Box::new(MixkwsWaveform(wave)));
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Save a waveform as 16-bit PCM mono WAV.
///
/// # Safety
/// `wave` must be a live handle; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_save(
    wave: *const MixkwsWaveform,
    path: *const c_char,
) -> MixkwsStatus {
    if wave.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "waveform is null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match save_wav(&path, &(*wave).0) {
        Ok(()) => MixkwsStatus::Ok,
        Err(e) => fail(&e),
    }
}

/// Deterministic synthetic keyword audio at 16 kHz (see the toolkit docs).
///
/// # Safety
/// `out` must be a valid pointer to a waveform handle slot.
#[no_mangle]
pub unsafe extern "C" fn mixkws_synth_keyword(
    keyword_id: u32,
    variant_seed: u64,
    duration_s: f64,
    out: *mut *mut MixkwsWaveform,
) -> MixkwsStatus {
    if out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "out pointer is null");
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return fail_with(MixkwsStatus::InvalidArgument, "duration must be positive");
    }
    let wave = synth_keyword(keyword_id, variant_seed, duration_s);
    *out = Box::into_raw(Box::new(MixkwsWaveform(wave)));
    MixkwsStatus::Ok
}

/// Convex superposition `w1*a + w2*b` (weights must sum to 1, each >= 0);
/// the shorter input is zero-padded.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mixkws_mix_waveforms(
    a: *const MixkwsWaveform,
    b: *const MixkwsWaveform,
    w1: f64,
    w2: f64,
    out: *mut *mut MixkwsWaveform,
) -> MixkwsStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    match convex_mix(&(*a).0, &(*b).0, w1, w2) {
        Ok(wave) => {
            *out = Box::into_raw(Box::new(MixkwsWaveform(wave)));
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Number of samples (0 for a null handle).
///
/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_len(wave: *const MixkwsWaveform) -> size_t {
    if wave.is_null() {
        0
    } else {
        (*wave).0.len()
    }
}

/// Sample rate in Hz (0 for a null handle).
///
/// # Safety
/// `wave` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_sample_rate(wave: *const MixkwsWaveform) -> u32 {
    if wave.is_null() {
        0
    } else {
        (*wave).0.sample_rate_hz()
    }
}

/// Copy samples into a caller buffer of at least `capacity` doubles.
///
/// # Safety
/// `buffer` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_copy_samples(
    wave: *const MixkwsWaveform,
    buffer: *mut f64,
    capacity: size_t,
) -> MixkwsStatus {
    if wave.is_null() || buffer.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    let samples = (*wave).0.samples();
    if capacity < samples.len() {
        return fail_with(
            MixkwsStatus::InvalidArgument,
            "buffer too small for waveform",
        );
    }
    std::ptr::copy_nonoverlapping(samples.as_ptr(), buffer, samples.len());
    MixkwsStatus::Ok
}

/// Free a waveform handle (null is a no-op).
///
/// # Safety
/// `wave` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixkws_waveform_free(wave: *mut MixkwsWaveform) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

/// 80-dimensional log-mel features (25 ms window, 10 ms hop).
///
/// # Safety
/// `wave` must be a live handle; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mixkws_fbank(
    wave: *const MixkwsWaveform,
    out: *mut *mut MixkwsFeatures,
) -> MixkwsStatus {
    if wave.is_null() || out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    match fbank(&(*wave).0) {
        Ok(features) => {
            *out = Box::into_raw(Box::new(MixkwsFeatures(features)));
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Number of frames (0 for a null handle).
///
/// # Safety
/// `features` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mixkws_features_num_frames(features: *const MixkwsFeatures) -> size_t {
    if features.is_null() {
        0
    } else {
        (*features).0.num_frames()
    }
}

/// Feature dimensionality (80; 0 for a null handle).
///
/// # Safety
/// `features` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mixkws_features_num_bins(features: *const MixkwsFeatures) -> size_t {
    if features.is_null() {
        0
    } else {
        (*features).0.num_bins()
    }
}

/// Copy the row-major `frames x bins` matrix into a caller buffer.
///
/// # Safety
/// `buffer` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mixkws_features_copy(
    features: *const MixkwsFeatures,
    buffer: *mut f64,
    capacity: size_t,
) -> MixkwsStatus {
    if features.is_null() || buffer.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    let data = (*features).0.data();
    if capacity < data.len() {
        return fail_with(
            MixkwsStatus::InvalidArgument,
            "buffer too small for feature matrix",
        );
    }
    std::ptr::copy_nonoverlapping(data.as_ptr(), buffer, data.len());
    MixkwsStatus::Ok
}

/// Free a feature handle (null is a no-op).
///
/// # Safety
/// `features` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixkws_features_free(features: *mut MixkwsFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Pooled equal error rate over `len` detection entries. `is_target[i]` is
/// nonzero when entry `i` belongs to a keyword truly present.
///
/// # Safety
/// `scores` and `is_target` must point to `len` readable elements; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn mixkws_compute_eer(
    scores: *const f64,
    is_target: *const u8,
    len: size_t,
    out: *mut f64,
) -> MixkwsStatus {
    if scores.is_null() || is_target.is_null() || out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    let scores = std::slice::from_raw_parts(scores, len);
    let targets = std::slice::from_raw_parts(is_target, len);
    let entries: Vec<DetectionEntry> = scores
        .iter()
        .zip(targets)
        .enumerate()
        .map(|(i, (&score, &target))| DetectionEntry {
            trial_id: i as u64,
            keyword_id: 0,
            score,
            is_target: target != 0,
        })
        .collect();
    match compute_eer(&DetectionLog::new(entries)) {
        Ok(eer) => {
            *out = eer;
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Load a model checkpoint produced by the toolkit.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mixkws_model_load(
    path: *const c_char,
    out: *mut *mut MixkwsModel,
) -> MixkwsStatus {
    if out.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "out pointer is null");
    }
    let path = match path_from(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match checkpoint::load(&path) {
        Ok((state, _echo)) => {
            *out = Box::into_raw(Box::new(MixkwsModel(state)));
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Number of keyword detectors in the model head (0 for a null handle).
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn mixkws_model_num_keywords(model: *const MixkwsModel) -> size_t {
    if model.is_null() {
        0
    } else {
        (*model).0.num_keywords()
    }
}

/// Score a waveform: writes one sigmoid detection score per keyword into
/// `scores` (needs capacity >= `mixkws_model_num_keywords`).
///
/// # Safety
/// `model` and `wave` must be live handles; `scores` must point to
/// `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mixkws_model_score(
    model: *const MixkwsModel,
    wave: *const MixkwsWaveform,
    scores: *mut f64,
    capacity: size_t,
) -> MixkwsStatus {
    if model.is_null() || wave.is_null() || scores.is_null() {
        return fail_with(MixkwsStatus::NullPointer, "null argument");
    }
    let state = &(*model).0;
    if capacity < state.num_keywords() {
        return fail_with(
            MixkwsStatus::InvalidArgument,
            "score buffer smaller than the keyword head",
        );
    }
    let features = match fbank(&(*wave).0) {
        Ok(f) => f,
        Err(e) => return fail(&e),
    };
    match detection_scores(state, &features) {
        Ok(values) => {
            std::ptr::copy_nonoverlapping(values.as_ptr(), scores, values.len());
            MixkwsStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Free a model handle (null is a no-op).
///
/// # Safety
/// `model` must be a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mixkws_model_free(model: *mut MixkwsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
