//! C ABI over the online detector: load a checkpoint, open per-video
//! streams and push clips one at a time.
//!
//! Every fallible function returns a [`WogmaStatus`]. On failure a message is
//! kept per thread and can be copied out with [`wogma_last_error_message`].
//! Handles are opaque; a stream keeps its model alive, so the two may be
//! freed in any order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use wogma::checkpoint;
use wogma::eval::temporal_iou;
use wogma::oamb::OnlineState;
use wogma::{Error, Model};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WogmaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    Panic = 6,
}

/// Loaded detector.
pub struct WogmaModel {
    inner: Arc<Model>,
}

/// Recurrent state of one video being scored clip by clip.
pub struct WogmaStream {
    model: Arc<Model>,
    state: OnlineState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> WogmaStatus {
    match err {
        Error::Io(_) => WogmaStatus::Io,
        Error::NonFinite { .. } => WogmaStatus::Numeric,
        Error::Checkpoint(_) | Error::Json(_) | Error::Line { .. } => WogmaStatus::Format,
        Error::Config(_) | Error::Data(_) | Error::Shape { .. } => WogmaStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (WogmaStatus, String)>) -> WogmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WogmaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            WogmaStatus::Panic
        }
    }
}

fn fail(err: Error) -> (WogmaStatus, String) {
    (status_of(&err), err.to_string())
}

fn null(what: &str) -> (WogmaStatus, String) {
    (WogmaStatus::NullArgument, format!("{what} is null"))
}

/// Loads a checkpoint from a NUL-terminated UTF-8 path.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer. On success
/// `*out` owns a model that must be released with [`wogma_model_free`].
#[no_mangle]
pub unsafe extern "C" fn wogma_model_load(path: *const c_char, out: *mut *mut WogmaModel) -> WogmaStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (WogmaStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let (model, _) = checkpoint::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(WogmaModel {
            inner: Arc::new(model),
        }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`wogma_model_load`] and not be freed twice.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wogma_model_free(model: *mut WogmaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of `f64` values in one clip (`frames × joints × 3`), or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wogma_model_clip_len(model: *const WogmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.clip_len())
}

/// Frames per clip, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wogma_model_clip_frames(model: *const WogmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().tau)
}

/// Joints per frame, or 0 for null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wogma_model_joints(model: *const WogmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.graph().num_joints())
}

/// Probabilities produced per clip: background plus each action class.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wogma_model_num_outputs(model: *const WogmaModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config().n_c + 1)
}

/// Opens a stream at the start of a video.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer. Release the
/// stream with [`wogma_stream_free`].
#[no_mangle]
pub unsafe extern "C" fn wogma_stream_new(model: *const WogmaModel, out: *mut *mut WogmaStream) -> WogmaStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(WogmaStream {
            state: model.inner.start_stream(),
            model: Arc::clone(&model.inner),
        }));
        Ok(())
    })
}

/// Scores the next clip. `clip` holds `clip_len` values laid out frame,
/// joint, (x, y, confidence), already normalised. The class probabilities
/// are written to `probs`, which must hold `probs_len >= num_outputs`
/// values. On error the stream is left unchanged.
///
/// # Safety
/// `stream` must be live; `clip` and `probs` must point to at least
/// `clip_len` and `probs_len` values.
#[no_mangle]
pub unsafe extern "C" fn wogma_stream_push_clip(
    stream: *mut WogmaStream,
    clip: *const f64,
    clip_len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> WogmaStatus {
    guard(|| {
        let stream = stream.as_mut().ok_or_else(|| null("stream"))?;
        if clip.is_null() {
            return Err(null("clip"));
        }
        if probs.is_null() {
            return Err(null("probs"));
        }
        let outputs = stream.model.config().n_c + 1;
        if probs_len < outputs {
            return Err((
                WogmaStatus::InvalidArgument,
                format!("probs holds {probs_len} values, {outputs} needed"),
            ));
        }
        let clip = std::slice::from_raw_parts(clip, clip_len);
        if clip.iter().any(|v| !v.is_finite()) {
            return Err((WogmaStatus::Numeric, "clip contains non-finite values".into()));
        }
        let mut next = stream.state.clone();
        let p = stream.model.push_clip(&mut next, clip).map_err(fail)?;
        std::slice::from_raw_parts_mut(probs, outputs).copy_from_slice(&p);
        stream.state = next;
        Ok(())
    })
}

/// Clips consumed so far, or 0 for null.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wogma_stream_clips_seen(stream: *const WogmaStream) -> usize {
    stream.as_ref().map_or(0, |s| s.state.clips_seen)
}

/// # Safety
/// `stream` must come from [`wogma_stream_new`] and not be freed twice.
/// Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn wogma_stream_free(stream: *mut WogmaStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

/// Intersection over union of two inclusive frame intervals.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn wogma_temporal_iou(
    a_start: usize,
    a_end: usize,
    b_start: usize,
    b_end: usize,
    out: *mut f64,
) -> WogmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if a_start > a_end || b_start > b_end {
            return Err((WogmaStatus::InvalidArgument, "interval start after end".into()));
        }
        *out = temporal_iou((a_start, a_end), (b_start, b_end));
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn wogma_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
