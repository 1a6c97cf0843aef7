//! Exercises the C entry points exactly as a foreign caller would:
//! through raw pointers and status codes.

use sage_ffi::*;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;

fn last_error() -> String {
    let mut buf = vec![0u8; 512];
    let n = unsafe { sage_last_error(buf.as_mut_ptr() as *mut c_char, buf.len()) };
    if n == 0 {
        return String::new();
    }
    let end = buf.iter().position(|&b| b == 0).unwrap_or(buf.len());
    String::from_utf8_lossy(&buf[..end]).into_owned()
}

#[test]
fn version_is_readable() {
    let v = unsafe { CStr::from_ptr(sage_version()) };
    assert!(v.to_str().unwrap().starts_with(char::is_numeric));
}

#[test]
fn default_trainer_runs_and_reports_metrics() {
    let trainer = unsafe { sage_trainer_new(std::ptr::null()) };
    assert!(!trainer.is_null(), "error: {}", last_error());

    let status = unsafe { sage_trainer_run(trainer, 50) };
    assert_eq!(status, SageStatus::Ok, "error: {}", last_error());

    let mut step = 0u64;
    assert_eq!(
        unsafe { sage_trainer_step_count(trainer, &mut step) },
        SageStatus::Ok
    );
    assert_eq!(step, 50);

    let mut needed = 0usize;
    let status = unsafe {
        sage_trainer_metrics_json(trainer, std::ptr::null_mut(), 0, &mut needed)
    };
    assert_eq!(status, SageStatus::BufferTooSmall);
    assert!(needed > 2);

    let mut buf = vec![0u8; needed];
    let status = unsafe {
        sage_trainer_metrics_json(trainer, buf.as_mut_ptr() as *mut c_char, buf.len(), &mut needed)
    };
    assert_eq!(status, SageStatus::Ok);
    let json = CStr::from_bytes_until_nul(&buf).unwrap().to_str().unwrap();
    let value: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(value["step"], 50);

    unsafe { sage_trainer_free(trainer) };
}

#[test]
fn custom_config_is_honored() {
    let config = CString::new(r#"{"seed": 9, "total_steps": 10, "group_size": 4}"#).unwrap();
    let trainer = unsafe { sage_trainer_new(config.as_ptr()) };
    assert!(!trainer.is_null(), "error: {}", last_error());
    assert_eq!(unsafe { sage_trainer_run(trainer, 10) }, SageStatus::Ok);
    unsafe { sage_trainer_free(trainer) };
}

#[test]
fn invalid_config_sets_the_error_message() {
    let config = CString::new(r#"{"group_size": 7}"#).unwrap();
    let trainer = unsafe { sage_trainer_new(config.as_ptr()) };
    assert!(trainer.is_null());
    assert!(last_error().contains("group_size"), "{}", last_error());

    let broken = CString::new("{not json").unwrap();
    let trainer = unsafe { sage_trainer_new(broken.as_ptr()) };
    assert!(trainer.is_null());
    assert!(last_error().contains("config"), "{}", last_error());
}

#[test]
fn null_arguments_are_rejected() {
    assert_eq!(
        unsafe { sage_trainer_run(std::ptr::null_mut(), 1) },
        SageStatus::NullArgument
    );
    let mut out = 0f64;
    assert_eq!(
        unsafe {
            sage_trainer_probe(std::ptr::null_mut(), std::ptr::null(), 8, 0, &mut out)
        },
        SageStatus::NullArgument
    );
    // freeing null is a no-op
    unsafe { sage_trainer_free(std::ptr::null_mut()) };
}

#[test]
fn probe_reports_a_probability() {
    let trainer = unsafe { sage_trainer_new(std::ptr::null()) };
    assert!(!trainer.is_null());
    assert_eq!(unsafe { sage_trainer_run(trainer, 30) }, SageStatus::Ok);

    let op = CString::new("hflip").unwrap();
    let mut consistency = -1.0f64;
    let status = unsafe { sage_trainer_probe(trainer, op.as_ptr(), 64, 7, &mut consistency) };
    assert_eq!(status, SageStatus::Ok, "error: {}", last_error());
    assert!((0.0..=1.0).contains(&consistency));

    let unknown = CString::new("warp_drive").unwrap();
    let status = unsafe { sage_trainer_probe(trainer, unknown.as_ptr(), 64, 7, &mut consistency) };
    assert_eq!(status, SageStatus::InvalidConfig);
    assert!(last_error().contains("warp_drive"));

    unsafe { sage_trainer_free(trainer) };
}

#[test]
fn save_load_resumes_the_same_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let config = CString::new(r#"{"seed": 5}"#).unwrap();

    // reference: 80 uninterrupted steps
    let full = unsafe { sage_trainer_new(config.as_ptr()) };
    assert_eq!(unsafe { sage_trainer_run(full, 80) }, SageStatus::Ok);

    // interrupted: 40 steps, save, load, 40 more
    let head = unsafe { sage_trainer_new(config.as_ptr()) };
    assert_eq!(unsafe { sage_trainer_run(head, 40) }, SageStatus::Ok);
    let dir_c = CString::new(dir.path().to_str().unwrap()).unwrap();
    assert_eq!(unsafe { sage_trainer_save(head, dir_c.as_ptr()) }, SageStatus::Ok);
    unsafe { sage_trainer_free(head) };

    let ckpt = CString::new(dir.path().join("checkpoint.json").to_str().unwrap()).unwrap();
    let resumed = unsafe { sage_trainer_load(ckpt.as_ptr()) };
    assert!(!resumed.is_null(), "error: {}", last_error());
    assert_eq!(unsafe { sage_trainer_run(resumed, 40) }, SageStatus::Ok);

    let metrics = |t| {
        let mut needed = 0usize;
        unsafe { sage_trainer_metrics_json(t, std::ptr::null_mut(), 0, &mut needed) };
        let mut buf = vec![0u8; needed];
        unsafe {
            sage_trainer_metrics_json(t, buf.as_mut_ptr() as *mut c_char, buf.len(), &mut needed)
        };
        String::from_utf8(buf[..needed - 1].to_vec()).unwrap()
    };
    assert_eq!(metrics(full), metrics(resumed));

    unsafe { sage_trainer_free(full) };
    unsafe { sage_trainer_free(resumed) };
}

#[test]
fn corpus_export_writes_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("corpus.jsonl").to_str().unwrap()).unwrap();
    let status =
        unsafe { sage_corpus_generate(std::ptr::null(), 3, 100, path.as_ptr()) };
    assert_eq!(status, SageStatus::Ok, "error: {}", last_error());
    let content = std::fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(content.lines().count(), 100);
}

#[test]
fn generated_header_declares_the_surface() {
    let header = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include/sage.h");
    let content = std::fs::read_to_string(header).expect("header generated by build.rs");
    for symbol in [
        "sage_trainer_new",
        "sage_trainer_free",
        "sage_trainer_run",
        "sage_trainer_probe",
        "sage_last_error",
        "sage_corpus_generate",
        "typedef struct SageTrainer SageTrainer",
        "SAGE_STATUS_OK",
    ] {
        assert!(content.contains(symbol), "header missing `{symbol}`");
    }
}
