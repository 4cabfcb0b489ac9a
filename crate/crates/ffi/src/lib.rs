//! C interface to the rse denoiser.
//!
//! Every function returns an [`RseStatus`]. On failure the message is
//! available from [`rse_last_error`] on the same thread until the next call.
//! Images cross the boundary as interleaved 8-bit RGB, row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rse_core::data::ImageBuffer;
use rse_core::metrics::psnr;
use rse_core::train::denoise_image;
use rse_core::{Error, ModelCheckpoint};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Geometry = 5,
    Checkpoint = 6,
    Runtime = 7,
    Panic = 8,
}

/// Opaque handle to a loaded checkpoint.
pub struct RseModel {
    ckpt: ModelCheckpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> RseStatus {
    match err {
        Error::Io { .. } => RseStatus::Io,
        Error::Format { .. } | Error::Json(_) => RseStatus::Format,
        Error::Geometry { .. } | Error::Shape(_) => RseStatus::Geometry,
        Error::Checkpoint(_) => RseStatus::Checkpoint,
        Error::InvalidArgument(_) | Error::ColorSpace { .. } | Error::EmptyDataset(_) => RseStatus::InvalidArgument,
        Error::NonFinite { .. } => RseStatus::Runtime,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RseStatus, String)>) -> RseStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RseStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RseStatus::Panic
        }
    }
}

fn core_err(e: Error) -> (RseStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RseStatus, String) {
    (RseStatus::NullPointer, format!("{what} is null"))
}

fn image_len(height: usize, width: usize) -> Result<usize, (RseStatus, String)> {
    height
        .checked_mul(width)
        .and_then(|n| n.checked_mul(3))
        .filter(|n| *n > 0)
        .ok_or_else(|| (RseStatus::InvalidArgument, format!("invalid image size {height}x{width}")))
}

/// Loads a checkpoint directory. On success `*out` owns a handle that must
/// be released with [`rse_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rse_model_load(path: *const c_char, out: *mut *mut RseModel) -> RseStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| (RseStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
        let ckpt = ModelCheckpoint::load(Path::new(path)).map_err(core_err)?;
        *out = Box::into_raw(Box::new(RseModel { ckpt }));
        Ok(())
    })
}

/// Releases a handle from [`rse_model_load`]. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rse_model_free(model: *mut RseModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Patch size and overlap the model was trained with.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn rse_model_geometry(
    model: *const RseModel,
    patch: *mut usize,
    overlap: *mut usize,
) -> RseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if patch.is_null() || overlap.is_null() {
            return Err(null("output pointer"));
        }
        *patch = model.ckpt.model.config.patch;
        *overlap = model.ckpt.model.config.overlap;
        Ok(())
    })
}

/// Denoises a `height` x `width` RGB8 image into `output`. Both buffers
/// hold `height * width * 3` bytes and may not overlap.
///
/// # Safety
/// `input` and `output` must be valid for `height * width * 3` bytes.
#[no_mangle]
pub unsafe extern "C" fn rse_denoise_rgb8(
    model: *const RseModel,
    input: *const u8,
    height: usize,
    width: usize,
    output: *mut u8,
) -> RseStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if input.is_null() {
            return Err(null("input"));
        }
        if output.is_null() {
            return Err(null("output"));
        }
        let n = image_len(height, width)?;
        let img = ImageBuffer::from_bytes(height, width, std::slice::from_raw_parts(input, n)).map_err(core_err)?;
        let out = denoise_image(&img, &model.ckpt.model).map_err(core_err)?;
        std::slice::from_raw_parts_mut(output, n).copy_from_slice(&out.to_bytes());
        Ok(())
    })
}

/// PSNR in dB between two RGB8 images; identical images give +infinity.
///
/// # Safety
/// `a` and `b` must be valid for `height * width * 3` bytes, `out` for one double.
#[no_mangle]
pub unsafe extern "C" fn rse_psnr_rgb8(
    a: *const u8,
    b: *const u8,
    height: usize,
    width: usize,
    out: *mut f64,
) -> RseStatus {
    guard(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            return Err(null("argument"));
        }
        let n = image_len(height, width)?;
        let ia = ImageBuffer::from_bytes(height, width, std::slice::from_raw_parts(a, n)).map_err(core_err)?;
        let ib = ImageBuffer::from_bytes(height, width, std::slice::from_raw_parts(b, n)).map_err(core_err)?;
        *out = psnr(&ia, &ib).map_err(core_err)?;
        Ok(())
    })
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn rse_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rse_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
