//! Compiles a small C program against the generated header and the shared
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

fn target_dir() -> PathBuf {
    // tests/<exe> lives in <target>/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/dimasr.h")).unwrap();
    for name in [
        "dimasr_abi_version",
        "dimasr_last_error_message",
        "dimasr_va_parse",
        "dimasr_va_format",
        "dimasr_scale_to_va",
        "dimasr_parse_llm_output",
        "dimasr_rmse_va",
        "dimasr_rmse_per_dimension",
        "dimasr_score_files",
        "dimasr_model_load",
        "dimasr_model_hidden_dim",
        "dimasr_model_predict",
        "dimasr_model_free",
        "typedef struct DimasrModel DimasrModel;",
        "DIMASR_STATUS_PANIC = 9",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = target_dir();
    assert!(
        lib_dir.join("libdimasr_ffi.so").exists() || lib_dir.join("libdimasr_ffi.dylib").exists(),
        "shared library not found in {}",
        lib_dir.display()
    );
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("c_smoke");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-ldimasr_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap_or_else(|e| panic!("running {cc}: {e}"));
    assert!(status.success(), "C compilation failed");
    let fixtures = manifest.join("../core/tests/fixtures");
    let out = Command::new(&exe)
        .arg(fixtures.join("score_gold.jsonl"))
        .arg(fixtures.join("score_pred.jsonl"))
        .env("LD_LIBRARY_PATH", &lib_dir)
        .env("DYLD_LIBRARY_PATH", &lib_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "2.4698");
}
