//! C interface to trained translation models.
//!
//! Models are opaque `AgModel` handles created by `ag_model_load` or
//! `ag_model_new` and released with `ag_model_free`. Every fallible call
//! returns an `AgStatus`; the message of the last failure on the calling
//! thread is available from `ag_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use attn_gan::eval::{mse, psnr_from_mse};
use attn_gan::nn::Mode;
use attn_gan::trainer::TrainState;
use attn_gan::{checkpoint, Domain, Error, ImageBatch, TrainConfig};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgStatus {
    AgOk = 0,
    /// A required pointer was null.
    AgErrNull = 1,
    /// An argument was out of range or inconsistent.
    AgErrInvalidArgument = 2,
    /// Image dimensions do not fit the model.
    AgErrDimension = 3,
    AgErrIo = 4,
    /// The checkpoint is malformed or does not match the architecture.
    AgErrCheckpoint = 5,
    /// A Rust panic was caught at the boundary.
    AgErrInternal = 6,
}

/// Translation direction.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgDirection {
    /// Domain A to domain B.
    AgAToB = 0,
    /// Domain B to domain A.
    AgBToA = 1,
}

/// A pair of generators plus the configuration they were built with.
pub struct AgModel {
    state: TrainState,
    cfg: TrainConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: AgStatus, msg: impl Into<String>) -> AgStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> AgStatus {
    let status = match &e {
        Error::Dimension { .. } => AgStatus::AgErrDimension,
        Error::Io { .. } | Error::Image { .. } => AgStatus::AgErrIo,
        Error::Checkpoint(_) | Error::ShapeMismatch(_) => AgStatus::AgErrCheckpoint,
        _ => AgStatus::AgErrInvalidArgument,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> AgStatus) -> AgStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(AgStatus::AgErrInternal, "panic inside attn-gan"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, AgStatus> {
    if p.is_null() {
        return Err(fail(AgStatus::AgErrNull, "path is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => Err(fail(AgStatus::AgErrInvalidArgument, "path is not valid UTF-8")),
    }
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ag_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model from a training checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ag_model_load(path: *const c_char, out: *mut *mut AgModel) -> AgStatus {
    guard(|| {
        if out.is_null() {
            return fail(AgStatus::AgErrNull, "out is null");
        }
        *out = ptr::null_mut();
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::load(&path) {
            Ok((state, cfg)) => {
                *out = Box::into_raw(Box::new(AgModel { state, cfg }));
                AgStatus::AgOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Creates a freshly initialized (untrained) model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ag_model_new(
    seed: u64,
    image_size: u32,
    channel_scale: f64,
    out: *mut *mut AgModel,
) -> AgStatus {
    guard(|| {
        if out.is_null() {
            return fail(AgStatus::AgErrNull, "out is null");
        }
        *out = ptr::null_mut();
        let cfg = TrainConfig {
            seed,
            image_size: image_size as usize,
            channel_scale,
            ..TrainConfig::default()
        };
        match TrainState::new(&cfg) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(AgModel { state, cfg }));
                AgStatus::AgOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// Writes the model (with its optimizer state) as a checkpoint.
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ag_model_save(model: *const AgModel, path: *const c_char) -> AgStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AgStatus::AgErrNull, "model is null");
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::save(&m.state, &m.cfg, &path) {
            Ok(()) => AgStatus::AgOk,
            Err(e) => from_error(e),
        }
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ag_model_free(model: *mut AgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Square image side the model expects, or 0 for a null model.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ag_model_image_size(model: *const AgModel) -> u32 {
    model.as_ref().map_or(0, |m| m.cfg.image_size as u32)
}

/// Total trainable parameters of both generators.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn ag_model_generator_parameters(model: *const AgModel) -> u64 {
    model.as_ref().map_or(0, |m| m.state.parameter_counts().0 as u64)
}

/// Translates one interleaved RGB8 image of `width * height * 3` bytes.
///
/// `out_rgb` receives the translated image (same size); `out_mask`, when not
/// null, receives `width * height` bytes of the attention mask scaled to 0..255.
///
/// # Safety
/// Buffers must be valid for the stated sizes and must not overlap.
#[no_mangle]
pub unsafe extern "C" fn ag_translate_rgb8(
    model: *const AgModel,
    direction: AgDirection,
    rgb: *const u8,
    width: u32,
    height: u32,
    out_rgb: *mut u8,
    out_mask: *mut u8,
) -> AgStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            return fail(AgStatus::AgErrNull, "model is null");
        };
        if rgb.is_null() || out_rgb.is_null() {
            return fail(AgStatus::AgErrNull, "image buffer is null");
        }
        let (w, h) = (width as usize, height as usize);
        if w == 0 || h == 0 {
            return fail(AgStatus::AgErrDimension, "image has zero size");
        }
        let n = w * h * 3;
        let (gen, domain) = match direction {
            AgDirection::AgAToB => (&m.state.g_xy, Domain::X),
            AgDirection::AgBToA => (&m.state.g_yx, Domain::Y),
        };
        let input = std::slice::from_raw_parts(rgb, n);
        let batch = match ImageBatch::from_rgb8(input, w, h, domain) {
            Ok(b) => b,
            Err(e) => return from_error(e),
        };
        let (out, pair) = match gen.translate(&batch, Mode::Eval) {
            Ok(v) => v,
            Err(e) => return from_error(e),
        };
        std::slice::from_raw_parts_mut(out_rgb, n).copy_from_slice(&out.to_rgb8(0));
        if !out_mask.is_null() {
            let dst = std::slice::from_raw_parts_mut(out_mask, w * h);
            for (d, &v) in dst.iter_mut().zip(pair.mask.tensor().data()) {
                *d = attn_gan::eval::mask_to_u8(f64::from(v));
            }
        }
        AgStatus::AgOk
    })
}

/// Mean squared error of two RGB8 buffers of `len` bytes, in 8-bit units.
///
/// # Safety
/// `a` and `b` must hold `len` bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ag_mse_rgb8(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> AgStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return fail(AgStatus::AgErrNull, "null argument");
        }
        match mse(std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len)) {
            Ok(v) => {
                *out = v;
                AgStatus::AgOk
            }
            Err(e) => from_error(e),
        }
    })
}

/// PSNR in dB of two RGB8 buffers; identical inputs give +infinity.
///
/// # Safety
/// As [`ag_mse_rgb8`].
#[no_mangle]
pub unsafe extern "C" fn ag_psnr_rgb8(a: *const u8, b: *const u8, len: usize, out: *mut f64) -> AgStatus {
    let mut e = 0.0;
    let s = ag_mse_rgb8(a, b, len, &mut e);
    if s == AgStatus::AgOk {
        *out = psnr_from_mse(e);
    }
    s
}
