//! C interface to the dimasr scorer, VA string handling and checkpoint
//! inference.
//!
//! Every fallible function returns a [`DimasrStatus`]. On failure the message
//! for the calling thread is available from [`dimasr_last_error_message`]
//! until the next failing call on that thread. Panics never cross the
//! boundary; they surface as `DIMASR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dimasr::data::AspectInstance;
use dimasr::model::checkpoint::load_checkpoint;
use dimasr::model::DimAsrModel;
use dimasr::{Error, VaPair};

/// Bumped whenever a signature or struct layout changes.
pub const DIMASR_ABI_VERSION: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimasrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    DataError = 5,
    IoError = 6,
    ModelError = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DimasrVaPair {
    pub valence: f64,
    pub arousal: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DimasrReport {
    pub rmse_va: f64,
    pub rmse_v: f64,
    pub rmse_a: f64,
    pub n: usize,
    pub error_median: f64,
    pub frac_below_1: f64,
    pub frac_above_2: f64,
}

/// Opaque handle to a loaded checkpoint.
pub struct DimasrModel {
    inner: DimAsrModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DimasrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) => DimasrStatus::InvalidArgument,
            Error::VaParse { .. } | Error::VaRange { .. } => DimasrStatus::ParseError,
            Error::Malformed { .. } | Error::Record { .. } | Error::Data(_) | Error::Json { .. } => {
                DimasrStatus::DataError
            }
            Error::Io { .. } => DimasrStatus::IoError,
            _ => DimasrStatus::ModelError,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DimasrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DimasrStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {what}"));
            DimasrStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(DimasrStatus::NullPointer, format!("{name} is null"))
}

unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|e| Failure(DimasrStatus::InvalidUtf8, format!("{name}: {e}")))
}

unsafe fn out_arg<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(name))
}

unsafe fn pairs(ptr: *const DimasrVaPair, n: usize, name: &str) -> Result<Vec<VaPair>, Failure> {
    if n == 0 {
        return Err(Failure(DimasrStatus::InvalidArgument, "n must be positive".into()));
    }
    if ptr.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts(ptr, n)
        .iter()
        .map(|p| VaPair::new(p.valence, p.arousal).map_err(Failure::from))
        .collect()
}

fn to_c(pair: VaPair) -> DimasrVaPair {
    DimasrVaPair {
        valence: pair.valence(),
        arousal: pair.arousal(),
    }
}

#[no_mangle]
pub extern "C" fn dimasr_abi_version() -> u32 {
    DIMASR_ABI_VERSION
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dimasr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses a gold-style `"V#A"` string. Out-of-range values are an error.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_va_parse(text: *const c_char, out: *mut DimasrVaPair) -> DimasrStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = to_c(dimasr::va::parse_va_string(text)?);
        Ok(())
    })
}

/// Writes `"V.VV#A.AA"` plus a NUL into `buf`. Needs at least 10 bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dimasr_va_format(pair: DimasrVaPair, buf: *mut c_char, len: usize) -> DimasrStatus {
    guard(|| {
        if buf.is_null() {
            return Err(null("buf"));
        }
        let text = VaPair::new(pair.valence, pair.arousal)?.to_va_string();
        if text.len() + 1 > len {
            return Err(Failure(
                DimasrStatus::BufferTooSmall,
                format!("need {} bytes, buffer has {len}", text.len() + 1),
            ));
        }
        std::ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// Maps an unbounded score into the open interval (1, 9).
#[no_mangle]
pub extern "C" fn dimasr_scale_to_va(raw: f64) -> f64 {
    dimasr::model::scale_to_va(raw)
}

/// Extracts and clips the first `number#number` in a free-form reply.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_parse_llm_output(text: *const c_char, out: *mut DimasrVaPair) -> DimasrStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = to_c(dimasr::llm::parse_llm_output(text)?);
        Ok(())
    })
}

/// # Safety
/// `preds` and `golds` must each point to `n` pairs; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_rmse_va(
    preds: *const DimasrVaPair,
    golds: *const DimasrVaPair,
    n: usize,
    out: *mut f64,
) -> DimasrStatus {
    guard(|| {
        let p = pairs(preds, n, "preds")?;
        let g = pairs(golds, n, "golds")?;
        let out = out_arg(out, "out")?;
        *out = dimasr::metrics::rmse_va(&p, &g)?;
        Ok(())
    })
}

/// # Safety
/// `preds` and `golds` must each point to `n` pairs; both outputs writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_rmse_per_dimension(
    preds: *const DimasrVaPair,
    golds: *const DimasrVaPair,
    n: usize,
    out_v: *mut f64,
    out_a: *mut f64,
) -> DimasrStatus {
    guard(|| {
        let p = pairs(preds, n, "preds")?;
        let g = pairs(golds, n, "golds")?;
        let out_v = out_arg(out_v, "out_v")?;
        let out_a = out_arg(out_a, "out_a")?;
        let (v, a) = dimasr::metrics::rmse_per_dimension(&p, &g)?;
        *out_v = v;
        *out_a = a;
        Ok(())
    })
}

/// Scores a prediction file against a gold instance file.
///
/// # Safety
/// Paths must be valid NUL-terminated strings and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_score_files(
    gold_path: *const c_char,
    pred_path: *const c_char,
    out: *mut DimasrReport,
) -> DimasrStatus {
    guard(|| {
        let gold = str_arg(gold_path, "gold_path")?;
        let pred = str_arg(pred_path, "pred_path")?;
        let out = out_arg(out, "out")?;
        let r = dimasr::metrics::score_files(Path::new(gold), Path::new(pred))?;
        *out = DimasrReport {
            rmse_va: r.rmse_va,
            rmse_v: r.rmse_v,
            rmse_a: r.rmse_a,
            n: r.n,
            error_median: r.error_median,
            frac_below_1: r.frac_below_1,
            frac_above_2: r.frac_above_2,
        };
        Ok(())
    })
}

/// Loads a checkpoint directory. Release the handle with
/// [`dimasr_model_free`].
///
/// # Safety
/// `dir` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_model_load(dir: *const c_char, out: *mut *mut DimasrModel) -> DimasrStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        let out = out_arg(out, "out")?;
        *out = std::ptr::null_mut();
        let inner = load_checkpoint(Path::new(dir))?;
        *out = Box::into_raw(Box::new(DimasrModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dimasr_model_load`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_model_hidden_dim(model: *const DimasrModel, out: *mut usize) -> DimasrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        *out_arg(out, "out")? = model.inner.hidden_dim();
        Ok(())
    })
}

/// Predicts one (text, aspect) instance in evaluation mode.
///
/// # Safety
/// `model` must come from [`dimasr_model_load`]; strings must be valid and
/// NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dimasr_model_predict(
    model: *const DimasrModel,
    text: *const c_char,
    aspect: *const c_char,
    out: *mut DimasrVaPair,
) -> DimasrStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let instance = AspectInstance {
            sentence_id: "ffi".into(),
            aspect_index: 0,
            text: str_arg(text, "text")?.into(),
            aspect: str_arg(aspect, "aspect")?.into(),
            gold: None,
        };
        let out = out_arg(out, "out")?;
        let pred = model.inner.predict(std::slice::from_ref(&instance))?;
        *out = to_c(pred[0]);
        Ok(())
    })
}

/// Releases a model handle. NULL is ignored.
///
/// # Safety
/// `model` must come from [`dimasr_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dimasr_model_free(model: *mut DimasrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
