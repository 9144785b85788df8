use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use dimasr::model::checkpoint::save_checkpoint;
use dimasr::model::{DimAsrModel, EncoderConfig, ModelConfig};
use dimasr_ffi::*;

fn last_error() -> String {
    let p = dimasr_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name);
    cstr(p.to_str().unwrap())
}

const ZERO: DimasrVaPair = DimasrVaPair { valence: 0.0, arousal: 0.0 };

#[test]
fn version_and_scaling() {
    assert_eq!(dimasr_abi_version(), DIMASR_ABI_VERSION);
    assert_eq!(dimasr_scale_to_va(0.0), 5.0);
    let hi = dimasr_scale_to_va(1e9);
    assert!(hi < 9.0 && hi > 8.99);
}

#[test]
fn va_strings() {
    let mut out = ZERO;
    let s = cstr("7.50#6.80");
    assert_eq!(unsafe { dimasr_va_parse(s.as_ptr(), &mut out) }, DimasrStatus::Ok);
    assert_eq!((out.valence, out.arousal), (7.5, 6.8));

    let bad = cstr("10.0#4.0");
    assert_eq!(unsafe { dimasr_va_parse(bad.as_ptr(), &mut out) }, DimasrStatus::ParseError);
    assert!(last_error().contains("out of range"));
    assert_eq!(unsafe { dimasr_va_parse(ptr::null(), &mut out) }, DimasrStatus::NullPointer);

    let mut buf = [0 as c_char; 10];
    let pair = DimasrVaPair { valence: 1.333, arousal: 8.667 };
    assert_eq!(unsafe { dimasr_va_format(pair, buf.as_mut_ptr(), buf.len()) }, DimasrStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap(), "1.33#8.67");
    assert_eq!(unsafe { dimasr_va_format(pair, buf.as_mut_ptr(), 9) }, DimasrStatus::BufferTooSmall);

    let reply = cstr("The answer is 9.80#0.20.");
    assert_eq!(unsafe { dimasr_parse_llm_output(reply.as_ptr(), &mut out) }, DimasrStatus::Ok);
    assert_eq!((out.valence, out.arousal), (9.0, 1.0));
    let prose = cstr("I cannot determine this.");
    assert_eq!(unsafe { dimasr_parse_llm_output(prose.as_ptr(), &mut out) }, DimasrStatus::ParseError);
}

#[test]
fn metrics() {
    let preds = [DimasrVaPair { valence: 6.0, arousal: 6.0 }, DimasrVaPair { valence: 5.0, arousal: 5.0 }];
    let golds = [DimasrVaPair { valence: 5.0, arousal: 5.0 }, DimasrVaPair { valence: 5.0, arousal: 5.0 }];
    let mut r = 0.0;
    assert_eq!(unsafe { dimasr_rmse_va(preds.as_ptr(), golds.as_ptr(), 2, &mut r) }, DimasrStatus::Ok);
    assert_eq!(r, 1.0);
    let (mut v, mut a) = (0.0, 0.0);
    assert_eq!(
        unsafe { dimasr_rmse_per_dimension(preds.as_ptr(), golds.as_ptr(), 2, &mut v, &mut a) },
        DimasrStatus::Ok
    );
    assert!((v * v + a * a - r * r).abs() < 1e-12);
    assert_eq!(unsafe { dimasr_rmse_va(preds.as_ptr(), golds.as_ptr(), 0, &mut r) }, DimasrStatus::InvalidArgument);

    let mut report = DimasrReport::default();
    let (g, p) = (fixture("score_gold.jsonl"), fixture("score_pred.jsonl"));
    assert_eq!(unsafe { dimasr_score_files(g.as_ptr(), p.as_ptr(), &mut report) }, DimasrStatus::Ok);
    assert_eq!(report.n, 5);
    assert!((report.rmse_va - 6.1f64.sqrt()).abs() < 1e-12);
    let missing = cstr("/nonexistent/pred.jsonl");
    assert_eq!(unsafe { dimasr_score_files(g.as_ptr(), missing.as_ptr(), &mut report) }, DimasrStatus::IoError);
}

#[test]
fn model_handle() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = DimAsrModel::from_config(&EncoderConfig::default(), 64, ModelConfig::default(), 42).unwrap();
    model.zero_heads();
    save_checkpoint(&model, dir.path()).unwrap();

    let path = cstr(dir.path().to_str().unwrap());
    let mut handle: *mut DimasrModel = ptr::null_mut();
    assert_eq!(unsafe { dimasr_model_load(path.as_ptr(), &mut handle) }, DimasrStatus::Ok);
    let mut dim = 0usize;
    assert_eq!(unsafe { dimasr_model_hidden_dim(handle, &mut dim) }, DimasrStatus::Ok);
    assert_eq!(dim, 32);
    let (text, aspect) = (cstr("the battery lasts all day"), cstr("battery"));
    let mut out = ZERO;
    assert_eq!(unsafe { dimasr_model_predict(handle, text.as_ptr(), aspect.as_ptr(), &mut out) }, DimasrStatus::Ok);
    assert_eq!((out.valence, out.arousal), (5.0, 5.0));
    let empty = cstr("");
    assert_eq!(
        unsafe { dimasr_model_predict(handle, text.as_ptr(), empty.as_ptr(), &mut out) },
        DimasrStatus::DataError
    );
    unsafe { dimasr_model_free(handle) };
    unsafe { dimasr_model_free(ptr::null_mut()) };

    let nowhere = cstr("/nonexistent/checkpoint");
    let mut handle: *mut DimasrModel = ptr::null_mut();
    assert_ne!(unsafe { dimasr_model_load(nowhere.as_ptr(), &mut handle) }, DimasrStatus::Ok);
    assert!(handle.is_null());
    assert!(last_error().contains("nonexistent"));
}
