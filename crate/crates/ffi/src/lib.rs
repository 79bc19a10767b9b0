//! C interface to the certification engine.
//!
//! Models, images and mask sets are opaque handles created by `pc_*_new` /
//! `pc_*_load` functions and released with the matching `pc_*_free`. Every
//! fallible function returns a [`PcStatus`]; on failure the message is
//! available from [`pc_last_error_message`] on the same thread. Strings
//! returned through out-parameters must be released with [`pc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use patchcert::backend::{Classifier, SyntheticModel, Thresholds};
use patchcert::demux::{demux_certify, demux_infer, location_aware_certify, AttackerMode};
use patchcert::error::Error;
use patchcert::geometry::{generate_mask_set, MaskSet, PatchSpec};
use patchcert::image::Image;
use patchcert::labels::LabelBits;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Backend = 5,
    Internal = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcAttackerMode {
    Fn = 0,
    Fp = 1,
    Worst = 2,
}

impl From<PcAttackerMode> for AttackerMode {
    fn from(m: PcAttackerMode) -> Self {
        match m {
            PcAttackerMode::Fn => AttackerMode::Fn,
            PcAttackerMode::Fp => AttackerMode::Fp,
            PcAttackerMode::Worst => AttackerMode::Worst,
        }
    }
}

/// Certified bounds for one image.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PcCertSummary {
    pub tp_lower: usize,
    pub fp_upper: usize,
    pub fn_upper: usize,
    /// Location-aware false-negative bound.
    pub fn_new: usize,
    /// Location-aware false-positive bound.
    pub fp_new: usize,
    /// Location-aware true-positive bound.
    pub tp_location: usize,
    /// 1 when a single mask attains both location-aware bounds.
    pub realizable: u8,
}

pub struct PcModel {
    inner: Box<dyn Classifier>,
}

pub struct PcImage {
    inner: Image,
}

pub struct PcMaskSet {
    inner: MaskSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(e: &Error) -> PcStatus {
    if e.is_backend() {
        PcStatus::Backend
    } else if e.is_config() {
        PcStatus::Config
    } else if matches!(e, Error::Shape(_)) {
        PcStatus::Shape
    } else {
        PcStatus::Internal
    }
}

enum Failure {
    Null(&'static str),
    Arg(String),
    Engine(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Engine(e)
    }
}

/// Run `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PcStatus::Ok
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what} is null"));
            PcStatus::NullPointer
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            PcStatus::InvalidArgument
        }
        Ok(Err(Failure::Engine(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    // SAFETY: caller passes a handle created by this library or null.
    unsafe { p.as_ref() }.ok_or(Failure::Null(what))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: non-null and NUL-terminated per the API contract.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Failure::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    // SAFETY: out is a valid pointer to writable storage per the contract.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::Arg("string contains NUL".into()))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pc_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: allocated by CString::into_raw in this library.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Synthetic model from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_model_from_synthetic_json(json: *const c_char, out: *mut *mut PcModel) -> PcStatus {
    guard(|| {
        let text = unsafe { c_str(json, "json") }?;
        let model = SyntheticModel::from_json(text)?;
        unsafe { write_out(out, PcModel { inner: Box::new(model) }, "out") }
    })
}

/// ONNX model taking `[1, channels, height, width]` input.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[cfg(feature = "onnx")]
#[no_mangle]
pub unsafe extern "C" fn pc_model_load_onnx(
    path: *const c_char,
    height: usize,
    width: usize,
    channels: usize,
    logits: u8,
    out: *mut *mut PcModel,
) -> PcStatus {
    use patchcert::backend::onnx::{OnnxConfig, OnnxModel, ResizePolicy};
    guard(|| {
        let path = unsafe { c_str(path, "path") }?;
        let model = OnnxModel::load(OnnxConfig {
            path: path.into(),
            input_height: height,
            input_width: width,
            channels,
            resize: ResizePolicy::Exact,
            logits: logits != 0,
            mean: None,
            std: None,
            low_score_regime: false,
        })?;
        unsafe { write_out(out, PcModel { inner: Box::new(model) }, "out") }
    })
}

/// Number of classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_model_num_classes(model: *const PcModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.inner.num_classes())
}

/// # Safety
/// `model` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_model_free(model: *mut PcModel) {
    if !model.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Image from `n1 * n2 * channels` row-major HWC values in `[0, 1]`.
///
/// # Safety
/// `data` must point to `len` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_image_new(
    n1: usize,
    n2: usize,
    channels: usize,
    data: *const f32,
    len: usize,
    out: *mut *mut PcImage,
) -> PcStatus {
    guard(|| {
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        // SAFETY: data points to len floats per the contract.
        let values = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let image = Image::new(n1, n2, channels, values)?;
        unsafe { write_out(out, PcImage { inner: image }, "out") }
    })
}

/// # Safety
/// `image` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_image_free(image: *mut PcImage) {
    if !image.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Covering mask set for a `p1 x p2` patch with at most `k1 x k2` masks.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mask_set_generate(
    n1: usize,
    n2: usize,
    p1: usize,
    p2: usize,
    k1: usize,
    k2: usize,
    out: *mut *mut PcMaskSet,
) -> PcStatus {
    guard(|| {
        let ms = generate_mask_set(n1, n2, PatchSpec::Pixels { p1, p2 }, k1, k2)?;
        unsafe { write_out(out, PcMaskSet { inner: ms }, "out") }
    })
}

/// Number of masks, or 0 for a null handle.
///
/// # Safety
/// `masks` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_mask_set_len(masks: *const PcMaskSet) -> usize {
    unsafe { masks.as_ref() }.map_or(0, |m| m.inner.len())
}

/// 1 when every patch placement lies inside some mask, 0 otherwise or for a
/// null handle.
///
/// # Safety
/// `masks` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_mask_set_is_covering(masks: *const PcMaskSet) -> u8 {
    unsafe { masks.as_ref() }.map_or(0, |m| u8::from(m.inner.is_covering()))
}

/// JSON layout of the mask set; free with [`pc_string_free`].
///
/// # Safety
/// `masks` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_mask_set_to_json(masks: *const PcMaskSet, out: *mut *mut c_char) -> PcStatus {
    guard(|| {
        let ms = unsafe { deref(masks, "masks") }?;
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        let s = into_c_string(ms.inner.to_json()?)?;
        // SAFETY: out checked non-null above.
        unsafe { *out = s };
        Ok(())
    })
}

/// # Safety
/// `masks` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_mask_set_free(masks: *mut PcMaskSet) {
    if !masks.is_null() {
        // SAFETY: created by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(masks) });
    }
}

/// Defended prediction; writes one 0/1 byte per class into `labels_out`.
///
/// # Safety
/// Handles must be live; `labels_out` must hold `num_classes` bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_demux_infer(
    model: *const PcModel,
    image: *const PcImage,
    masks: *const PcMaskSet,
    threshold: f64,
    labels_out: *mut u8,
    num_classes: usize,
) -> PcStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        let image = unsafe { deref(image, "image") }?;
        let masks = unsafe { deref(masks, "masks") }?;
        if labels_out.is_null() {
            return Err(Failure::Null("labels_out"));
        }
        if num_classes != model.inner.num_classes() {
            return Err(Failure::Arg(format!(
                "buffer holds {num_classes} labels, model has {}",
                model.inner.num_classes()
            )));
        }
        let preds = demux_infer(model.inner.as_ref(), &image.inner, &masks.inner, &Thresholds::Global(threshold))?;
        // SAFETY: labels_out holds num_classes bytes per the contract.
        let out = unsafe { std::slice::from_raw_parts_mut(labels_out, num_classes) };
        for (o, p) in out.iter_mut().zip(preds) {
            *o = u8::from(p);
        }
        Ok(())
    })
}

/// Certify against ground truth `labels` (one 0/1 byte per class). When
/// `json_out` is non-null it receives the full summary, including
/// vulnerability arrays, as JSON; free it with [`pc_string_free`].
///
/// # Safety
/// Handles must be live; `labels` must hold `num_classes` bytes; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_demux_certify(
    model: *const PcModel,
    image: *const PcImage,
    masks: *const PcMaskSet,
    labels: *const u8,
    num_classes: usize,
    threshold: f64,
    mode: PcAttackerMode,
    out: *mut PcCertSummary,
    json_out: *mut *mut c_char,
) -> PcStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        let image = unsafe { deref(image, "image") }?;
        let masks = unsafe { deref(masks, "masks") }?;
        if labels.is_null() {
            return Err(Failure::Null("labels"));
        }
        if out.is_null() {
            return Err(Failure::Null("out"));
        }
        // SAFETY: labels holds num_classes bytes per the contract.
        let raw = unsafe { std::slice::from_raw_parts(labels, num_classes) };
        if let Some(b) = raw.iter().find(|&&b| b > 1) {
            return Err(Failure::Arg(format!("label byte {b} is not 0 or 1")));
        }
        let truth = LabelBits(raw.iter().map(|&b| b == 1).collect());
        let base = demux_certify(model.inner.as_ref(), &image.inner, &truth, &masks.inner, &Thresholds::Global(threshold))?;
        let s = location_aware_certify(&base, mode.into())?;
        let summary = PcCertSummary {
            tp_lower: s.tp_lower,
            fp_upper: s.fp_upper,
            fn_upper: s.fn_upper,
            fn_new: s.fn_new,
            fp_new: s.fp_new,
            tp_location: s.tp_location(),
            realizable: u8::from(s.location.as_ref().is_none_or(|l| l.realizable)),
        };
        if !json_out.is_null() {
            let json = into_c_string(s.to_json()?)?;
            // SAFETY: json_out checked non-null above.
            unsafe { *json_out = json };
        }
        // SAFETY: out checked non-null above.
        unsafe { *out = summary };
        Ok(())
    })
}
