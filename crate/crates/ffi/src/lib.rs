//! C ABI for the video super-resolution engine.
//!
//! The engine is exposed as an opaque handle created from either a fresh
//! seeded initialization or a weight file. Buffers cross the boundary as
//! planar NCHW float arrays in [0,1]. Every fallible call returns a
//! [`CtunStatus`]; the most recent failure message on the calling thread is
//! available through [`ctun_last_error_message`].
//!
//! Handles are not thread-safe; use one handle per thread or synchronize
//! externally. The generated header lives at `include/ctun.h`.

use ctun_core::data::{load_weights, save_weights};
use ctun_core::model::{param_count, CtunConfig, CtunModel, UgruVariant};
use ctun_core::tensor::{Shape, Tensor};
use ctun_core::CtunError;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Result of a C API call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CtunStatus {
    Ok = 0,
    /// A pointer argument was null.
    NullPointer = 1,
    /// An argument was outside the documented domain.
    InvalidArgument = 2,
    /// The operation itself failed; see `ctun_last_error_message`.
    RuntimeError = 3,
}

/// Opaque engine handle: a model configuration plus its weights.
pub struct CtunEngine {
    model: CtunModel<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into();
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(msg).unwrap_or_default();
    });
}

fn fail(err: CtunError) -> CtunStatus {
    let status = match err {
        CtunError::InvalidArg { .. } | CtunError::ShapeMismatch { .. } => {
            CtunStatus::InvalidArgument
        }
        _ => CtunStatus::RuntimeError,
    };
    set_error(err.to_string());
    status
}

/// Copy the most recent error message for this thread into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn ctun_last_error_message(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            // always terminate
            *buf.add(n - 1) = 0;
        }
        bytes.len() - 1
    })
}

/// Library version string; static storage, do not free.
#[no_mangle]
pub extern "C" fn ctun_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

fn config_from_raw(
    channels: u32,
    blocks_extractor: u32,
    blocks_propagation: u32,
    blocks_reconstruction: u32,
    scale: u32,
    shared_ugru: bool,
) -> CtunConfig {
    let mut config = CtunConfig::desk();
    config.channels = channels as usize;
    config.blocks.extractor = blocks_extractor as usize;
    config.blocks.propagation = blocks_propagation as usize;
    config.blocks.reconstruction = blocks_reconstruction as usize;
    config.scale = scale as usize;
    config.ugru_variant = if shared_ugru {
        UgruVariant::Shared
    } else {
        UgruVariant::Split
    };
    config
}

/// Create an engine with freshly initialized (seeded) weights.
///
/// # Safety
/// `out` must be a valid pointer to an engine-handle slot.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_create(
    channels: u32,
    blocks_extractor: u32,
    blocks_propagation: u32,
    blocks_reconstruction: u32,
    scale: u32,
    shared_ugru: bool,
    seed: u64,
    out: *mut *mut CtunEngine,
) -> CtunStatus {
    if out.is_null() {
        return CtunStatus::NullPointer;
    }
    let config = config_from_raw(
        channels,
        blocks_extractor,
        blocks_propagation,
        blocks_reconstruction,
        scale,
        shared_ugru,
    );
    match CtunModel::init(config, seed, false) {
        Ok(model) => {
            *out = Box::into_raw(Box::new(CtunEngine { model }));
            CtunStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Create an engine from a weight file. The configuration must match the
/// file's tensors.
///
/// # Safety
/// `weights_path` must be a NUL-terminated string and `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_load(
    weights_path: *const c_char,
    channels: u32,
    blocks_extractor: u32,
    blocks_propagation: u32,
    blocks_reconstruction: u32,
    scale: u32,
    shared_ugru: bool,
    out: *mut *mut CtunEngine,
) -> CtunStatus {
    if weights_path.is_null() || out.is_null() {
        return CtunStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(weights_path).to_str() else {
        set_error("weights path is not valid UTF-8");
        return CtunStatus::InvalidArgument;
    };
    let config = config_from_raw(
        channels,
        blocks_extractor,
        blocks_propagation,
        blocks_reconstruction,
        scale,
        shared_ugru,
    );
    let result = load_weights(Path::new(path)).and_then(|store| CtunModel::new(config, store));
    match result {
        Ok(model) => {
            *out = Box::into_raw(Box::new(CtunEngine { model }));
            CtunStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Destroy an engine created by `ctun_engine_create` or `ctun_engine_load`.
/// Null is ignored.
///
/// # Safety
/// `engine` must be a handle from this library, destroyed at most once.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_destroy(engine: *mut CtunEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Save the engine's weights in the binary weight-file format.
///
/// # Safety
/// `engine` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_save(
    engine: *const CtunEngine,
    path: *const c_char,
) -> CtunStatus {
    if engine.is_null() || path.is_null() {
        return CtunStatus::NullPointer;
    }
    let Ok(path) = CStr::from_ptr(path).to_str() else {
        set_error("path is not valid UTF-8");
        return CtunStatus::InvalidArgument;
    };
    match save_weights((*engine).model.params(), Path::new(path)) {
        Ok(()) => CtunStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Upscaling factor of the engine.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_scale(engine: *const CtunEngine) -> u32 {
    if engine.is_null() {
        return 0;
    }
    (*engine).model.config().scale as u32
}

/// Total trainable parameter count of the engine's configuration.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_param_count(engine: *const CtunEngine) -> usize {
    if engine.is_null() {
        return 0;
    }
    param_count((*engine).model.config())
}

/// Super-resolve `n_frames` of planar RGB (NCHW, values in [0,1]).
///
/// `frames` holds n_frames * 3 * height * width floats; `out` must have room
/// for n_frames * 3 * (scale*height) * (scale*width) floats. Frames stream
/// through the engine one at a time.
///
/// # Safety
/// `engine` must be a live handle and both buffers must match the documented
/// lengths.
#[no_mangle]
pub unsafe extern "C" fn ctun_engine_super_resolve(
    engine: *const CtunEngine,
    frames: *const f32,
    n_frames: usize,
    height: usize,
    width: usize,
    out: *mut f32,
) -> CtunStatus {
    if engine.is_null() || frames.is_null() || out.is_null() {
        return CtunStatus::NullPointer;
    }
    if n_frames == 0 || height == 0 || width == 0 {
        set_error("empty input");
        return CtunStatus::InvalidArgument;
    }
    let engine = &*engine;
    let scale = engine.model.config().scale;
    let frame_len = 3 * height * width;
    let out_frame_len = frame_len * scale * scale;
    let input = std::slice::from_raw_parts(frames, n_frames * frame_len);
    let output = std::slice::from_raw_parts_mut(out, n_frames * out_frame_len);
    let result = engine.model.super_resolve_with(
        n_frames,
        |t| {
            Ok(Tensor::from_vec(
                input[t * frame_len..(t + 1) * frame_len].to_vec(),
                Shape::new(1, 3, height, width),
            ))
        },
        |t, y| {
            output[t * out_frame_len..(t + 1) * out_frame_len].copy_from_slice(&y.data());
            Ok(())
        },
    );
    match result {
        Ok(()) => CtunStatus::Ok,
        Err(e) => fail(e),
    }
}

/// PSNR between two equal-length buffers, in dB, capped at 99.0 for
/// identical inputs. `peak` is the signal maximum (255 for 8-bit).
///
/// # Safety
/// Both buffers must hold `len` floats; `out` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn ctun_psnr(
    a: *const f32,
    b: *const f32,
    len: usize,
    peak: f64,
    out: *mut f64,
) -> CtunStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return CtunStatus::NullPointer;
    }
    if len == 0 {
        set_error("empty buffers");
        return CtunStatus::InvalidArgument;
    }
    let shape = Shape::new(1, 1, 1, len);
    let ta = Tensor::from_vec(std::slice::from_raw_parts(a, len).to_vec(), shape);
    let tb = Tensor::from_vec(std::slice::from_raw_parts(b, len).to_vec(), shape);
    match ctun_core::metrics::psnr(&ta, &tb, peak) {
        Ok(v) => {
            *out = v;
            CtunStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Single-scale SSIM between two single-channel images in 0-255 units.
///
/// # Safety
/// Both buffers must hold `height * width` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ctun_ssim(
    a: *const f32,
    b: *const f32,
    height: usize,
    width: usize,
    out: *mut f64,
) -> CtunStatus {
    if a.is_null() || b.is_null() || out.is_null() {
        return CtunStatus::NullPointer;
    }
    if height == 0 || width == 0 {
        set_error("empty image");
        return CtunStatus::InvalidArgument;
    }
    let shape = Shape::new(1, 1, height, width);
    let n = height * width;
    let ta = Tensor::from_vec(std::slice::from_raw_parts(a, n).to_vec(), shape);
    let tb = Tensor::from_vec(std::slice::from_raw_parts(b, n).to_vec(), shape);
    match ctun_core::metrics::ssim(&ta, &tb) {
        Ok(v) => {
            *out = v;
            CtunStatus::Ok
        }
        Err(e) => fail(e),
    }
}
