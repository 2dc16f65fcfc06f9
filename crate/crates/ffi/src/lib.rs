//! C ABI over the fraglayer detector and merger.
//!
//! Handles are opaque and not thread-safe. Every function returns an
//! [`FlStatus`]; on failure, [`fl_last_error`] describes the error raised on
//! the calling thread. Strings returned through out-parameters are owned by
//! the caller and released with [`fl_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fraglayer::cli::{detect, merge_artboard, Detections};
use fraglayer::gnn::{model_from_checkpoint, Model};
use fraglayer::layer::{load_screenshot, parse_artboard, Artboard, Raster};
use fraglayer::nn::Checkpoint;
use fraglayer::Error;

/// Result codes of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Manifest = 4,
    Screenshot = 5,
    Checkpoint = 6,
    Model = 7,
    Io = 8,
    Panic = 9,
}

/// A parsed artboard and its optional screenshot.
pub struct FlArtboard {
    artboard: Artboard,
    screenshot: Option<Raster>,
}

/// A loaded detector checkpoint.
pub struct FlDetector {
    model: Model,
    threshold: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FlStatus {
    match e {
        Error::Manifest(_) => FlStatus::Manifest,
        Error::Screenshot(_) => FlStatus::Screenshot,
        Error::Checkpoint(_) => FlStatus::Checkpoint,
        Error::Io { .. } => FlStatus::Io,
        Error::Detections(_) | Error::Json(_) => FlStatus::InvalidArgument,
        _ => FlStatus::Model,
    }
}

struct Fail(FlStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FlStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FlStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            FlStatus::Panic
        }
    }
}

unsafe fn bytes<'a>(ptr: *const u8, len: usize, what: &str) -> Result<&'a [u8], Fail> {
    if ptr.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(null(what)) };
    }
    // SAFETY: the caller guarantees `len` readable bytes at `ptr`.
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

unsafe fn text<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if ptr.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees a NUL-terminated string.
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Fail(FlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `out` is writable.
    unsafe { out.write(value) };
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|_| Fail(FlStatus::InvalidArgument, "output contains a NUL byte".into()))?;
    unsafe { put(out, c.into_raw(), "out") }
}

/// Message of the last failure on this thread; empty after a success. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a manifest of `len` bytes into a new artboard handle.
///
/// # Safety
/// `json` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fl_artboard_parse(json: *const u8, len: usize, out: *mut *mut FlArtboard) -> FlStatus {
    guard(|| {
        let artboard = parse_artboard(unsafe { bytes(json, len, "json") }?)?;
        let handle = Box::into_raw(Box::new(FlArtboard {
            artboard,
            screenshot: None,
        }));
        unsafe { put(out, handle, "out") }.inspect_err(|_| drop(unsafe { Box::from_raw(handle) }))
    })
}

/// Attaches a binary PPM screenshot matching the artboard size.
///
/// # Safety
/// `artboard` must be a live handle; `ppm` must point to `len` readable bytes.
#[no_mangle]
pub unsafe extern "C" fn fl_artboard_set_screenshot(artboard: *mut FlArtboard, ppm: *const u8, len: usize) -> FlStatus {
    guard(|| {
        let a = unsafe { artboard.as_mut() }.ok_or_else(|| null("artboard"))?;
        a.screenshot = Some(load_screenshot(unsafe { bytes(ppm, len, "ppm") }?, &a.artboard)?);
        Ok(())
    })
}

/// Number of layers in the artboard.
///
/// # Safety
/// `artboard` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_artboard_layer_count(artboard: *const FlArtboard, out: *mut usize) -> FlStatus {
    guard(|| {
        let a = unsafe { artboard.as_ref() }.ok_or_else(|| null("artboard"))?;
        unsafe { put(out, a.artboard.layers.len(), "out") }
    })
}

/// Releases an artboard handle; null is ignored.
///
/// # Safety
/// `artboard` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_artboard_free(artboard: *mut FlArtboard) {
    if !artboard.is_null() {
        drop(unsafe { Box::from_raw(artboard) });
    }
}

/// Loads a checkpoint file into a new detector handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_detector_load(path: *const c_char, out: *mut *mut FlDetector) -> FlStatus {
    guard(|| {
        let path = unsafe { text(path, "path") }?;
        let ck = Checkpoint::load(Path::new(path))?;
        let model = model_from_checkpoint(&ck)?;
        let threshold = ck
            .meta
            .pointer("/train/threshold")
            .and_then(|v| v.as_f64())
            .unwrap_or(0.5);
        let handle = Box::into_raw(Box::new(FlDetector { model, threshold }));
        unsafe { put(out, handle, "out") }.inspect_err(|_| drop(unsafe { Box::from_raw(handle) }))
    })
}

/// Sets the probability at or above which a layer is labeled fragmented.
///
/// # Safety
/// `detector` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fl_detector_set_threshold(detector: *mut FlDetector, threshold: f64) -> FlStatus {
    guard(|| {
        let d = unsafe { detector.as_mut() }.ok_or_else(|| null("detector"))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Fail(FlStatus::InvalidArgument, format!("threshold {threshold} is outside [0, 1]")));
        }
        d.threshold = threshold;
        Ok(())
    })
}

/// Releases a detector handle; null is ignored.
///
/// # Safety
/// `detector` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_detector_free(detector: *mut FlDetector) {
    if !detector.is_null() {
        drop(unsafe { Box::from_raw(detector) });
    }
}

/// Detection JSON for every window of the artboard.
///
/// # Safety
/// Both handles must be live and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_detect(
    detector: *const FlDetector,
    artboard: *const FlArtboard,
    out_json: *mut *mut c_char,
) -> FlStatus {
    guard(|| {
        let d = unsafe { detector.as_ref() }.ok_or_else(|| null("detector"))?;
        let a = unsafe { artboard.as_ref() }.ok_or_else(|| null("artboard"))?;
        let det = detect(&d.model, &a.artboard, a.screenshot.as_ref(), d.threshold)?;
        unsafe { put_string(out_json, serde_json::to_string(&det).map_err(Error::from)?) }
    })
}

/// Merge JSON from detection JSON, or from the artboard's own labels when
/// `detections_json` is null.
///
/// # Safety
/// `artboard` must be live, `detections_json` null or NUL-terminated, and
/// `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn fl_merge(
    artboard: *const FlArtboard,
    detections_json: *const c_char,
    tau: f64,
    out_json: *mut *mut c_char,
) -> FlStatus {
    guard(|| {
        let a = unsafe { artboard.as_ref() }.ok_or_else(|| null("artboard"))?;
        let ab = &a.artboard;
        let out = if detections_json.is_null() {
            if ab.labels.is_none() {
                return Err(Fail(FlStatus::InvalidArgument, "artboard carries no labels".into()));
            }
            merge_artboard(ab, |id| ab.label(id).is_some_and(|l| l.fragmented), tau)?
        } else {
            let det: Detections = serde_json::from_str(unsafe { text(detections_json, "detections_json") }?)
                .map_err(Error::from)?;
            let positives: std::collections::HashSet<&str> = det
                .windows
                .iter()
                .flat_map(|w| &w.layers)
                .filter(|l| l.label == 1)
                .map(|l| l.id.as_str())
                .collect();
            merge_artboard(ab, |id| positives.contains(id), tau)?
        };
        unsafe { put_string(out_json, serde_json::to_string(&out).map_err(Error::from)?) }
    })
}

/// Releases a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
