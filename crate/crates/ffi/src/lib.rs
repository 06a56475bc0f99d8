//! C interface to the enhancement model and the objective metrics.
//!
//! Every function returns an [`AvcrnStatus`]. On failure the message is kept
//! per thread and can be read with [`avcrn_last_error`]. Models are opaque
//! handles released with [`avcrn_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use avcrn::audio::{waveform_log_mel, MelFilterbank, SpectrumScale, N_MELS};
use avcrn::enhance::enhance;
use avcrn::model::{Avcrn, Checkpoint, ModelConfig};
use avcrn::visual::{VideoSegment, SEGMENT_LEN};
use avcrn::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AvcrnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Numeric = 4,
    Io = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque model handle.
pub struct AvcrnModel {
    model: Avcrn,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> AvcrnStatus {
    match e {
        Error::Config { .. } => AvcrnStatus::InvalidArgument,
        Error::Tensor(_) | Error::Numeric(_) => AvcrnStatus::Numeric,
        Error::Io(_) => AvcrnStatus::Io,
        Error::Checkpoint(_) => AvcrnStatus::Checkpoint,
        _ => AvcrnStatus::Format,
    }
}

struct Failure(AvcrnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(AvcrnStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AvcrnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            AvcrnStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AvcrnStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(AvcrnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn model_arg<'a>(p: *const AvcrnModel) -> Result<&'a Avcrn, Failure> {
    p.as_ref().map(|m| &m.model).ok_or_else(|| null("model"))
}

unsafe fn store_model(out: *mut *mut AvcrnModel, model: Avcrn) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(AvcrnModel { model }));
    Ok(())
}

/// Message of the last failed call on this thread, or null after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn avcrn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn avcrn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a freshly initialized model from a JSON model config.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_new(
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut AvcrnModel,
) -> AvcrnStatus {
    guard(|| {
        let text = str_arg(config_json, "config_json")?;
        let cfg: ModelConfig =
            serde_json::from_str(text).map_err(|e| Failure(AvcrnStatus::InvalidArgument, format!("config: {e}")))?;
        store_model(out, Avcrn::new(cfg, seed)?)
    })
}

/// Loads the model stored in a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_load(path: *const c_char, out: *mut *mut AvcrnModel) -> AvcrnStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        store_model(out, Checkpoint::load(Path::new(path))?.model)
    })
}

/// Writes the model as a checkpoint without optimizer state.
///
/// # Safety
/// `model` must come from this library and `path` be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_save(model: *const AvcrnModel, path: *const c_char) -> AvcrnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let path = str_arg(path, "path")?;
        Checkpoint::new(m.clone()).save(Path::new(path))?;
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_free(model: *mut AvcrnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of learnable scalars.
///
/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_num_params(model: *const AvcrnModel, out: *mut usize) -> AvcrnStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.num_params();
        Ok(())
    })
}

/// Whether the model reads video (1) or ignores it (0).
///
/// # Safety
/// `model` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn avcrn_model_uses_video(model: *const AvcrnModel, out: *mut i32) -> AvcrnStatus {
    guard(|| {
        let m = model_arg(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = i32::from(!m.config.disable_video);
        Ok(())
    })
}

/// Enhances `len` samples at 16 kHz into `out`, which must hold `len` values.
/// `video` holds `video_len` pixels in [0, 1], 5 x 80 x 80 per 200 ms
/// segment, or is null to feed black frames.
///
/// # Safety
/// Buffers must be valid for the given lengths.
#[no_mangle]
pub unsafe extern "C" fn avcrn_enhance(
    model: *const AvcrnModel,
    samples: *const f64,
    len: usize,
    video: *const f64,
    video_len: usize,
    out: *mut f64,
    out_len: usize,
) -> AvcrnStatus {
    guard(|| {
        let m = model_arg(model)?;
        let x = slice_arg(samples, len, "samples")?;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len < len {
            return Err(Failure(
                AvcrnStatus::BufferTooSmall,
                format!("out holds {out_len} values, {len} needed"),
            ));
        }
        let segments = if video.is_null() {
            None
        } else {
            if !video_len.is_multiple_of(SEGMENT_LEN) {
                return Err(Failure(
                    AvcrnStatus::InvalidArgument,
                    format!("video_len {video_len} is not a multiple of {SEGMENT_LEN}"),
                ));
            }
            let v = slice_arg(video, video_len, "video")?;
            Some(
                v.chunks(SEGMENT_LEN)
                    .map(|c| VideoSegment::new(c.to_vec()))
                    .collect::<avcrn::Result<Vec<_>>>()?,
            )
        };
        let y = enhance(m, x, segments.as_deref())?;
        std::slice::from_raw_parts_mut(out, len).copy_from_slice(&y.samples);
        Ok(())
    })
}

/// Log-mel matrix of `len` samples, 80 rows of `frames` values, row-major.
/// With `out` null only `frames` is written, so callers can size the buffer.
///
/// # Safety
/// Buffers must be valid for the given lengths and `frames` writable.
#[no_mangle]
pub unsafe extern "C" fn avcrn_log_mel(
    samples: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
    frames: *mut usize,
) -> AvcrnStatus {
    guard(|| {
        let x = slice_arg(samples, len, "samples")?;
        if frames.is_null() {
            return Err(null("frames"));
        }
        let mel = waveform_log_mel(x, &MelFilterbank::new(), SpectrumScale::Power)?;
        *frames = mel.frames;
        if out.is_null() {
            return Ok(());
        }
        let need = N_MELS * mel.frames;
        if out_len < need {
            return Err(Failure(
                AvcrnStatus::BufferTooSmall,
                format!("out holds {out_len} values, {need} needed"),
            ));
        }
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(&mel.data);
        Ok(())
    })
}

/// Intelligibility score in [0, 1] of two equal-length 16 kHz signals.
///
/// # Safety
/// Both buffers must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn avcrn_stoi(
    clean: *const f64,
    processed: *const f64,
    len: usize,
    out: *mut f64,
) -> AvcrnStatus {
    guard(|| {
        let (x, y) = (slice_arg(clean, len, "clean")?, slice_arg(processed, len, "processed")?);
        if out.is_null() {
            return Err(null("out"));
        }
        *out = avcrn::metrics::stoi(x, y)?;
        Ok(())
    })
}

/// Scale-invariant SDR in dB, clamped to ±100.
///
/// # Safety
/// Both buffers must hold `len` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn avcrn_si_sdr(
    reference: *const f64,
    estimate: *const f64,
    len: usize,
    out: *mut f64,
) -> AvcrnStatus {
    guard(|| {
        let (r, e) = (
            slice_arg(reference, len, "reference")?,
            slice_arg(estimate, len, "estimate")?,
        );
        if out.is_null() {
            return Err(null("out"));
        }
        *out = avcrn::metrics::si_sdr(r, e)?;
        Ok(())
    })
}
