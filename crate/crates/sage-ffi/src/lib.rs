//! C ABI over the training lab: opaque trainer handles, integer status
//! codes, JSON strings at the boundary.
//!
//! Conventions: every function returns a `SageStatus` (or a pointer that
//! is null on failure); the last failure message is kept per thread and
//! retrievable via `sage_last_error`. Strings are NUL-terminated UTF-8.
//! Handles must be freed exactly once with `sage_trainer_free`.

use sage_core::artifacts::{load_checkpoint, save_checkpoint, write_jsonl};
use sage_core::scene::{sample_instance, CorpusRecord};
use sage_core::trainer::{StepMetrics, TrainConfig, Trainer};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SageStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    RuntimeFailure = 4,
    BufferTooSmall = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

/// Opaque trainer handle: the training state plus the last step's
/// metrics.
pub struct SageTrainer {
    inner: Trainer,
    last_metrics: Option<StepMetrics>,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sage_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Copy the last error message into `buf` (up to `cap` bytes including
/// the terminator) and return the full length including the terminator.
/// A zero return means no error has been recorded on this thread.
///
/// # Safety
/// `buf` must point to `cap` writable bytes, or be null (the needed
/// length is still returned).
#[no_mangle]
pub unsafe extern "C" fn sage_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes_with_nul();
        if bytes.len() <= 1 {
            return 0;
        }
        if !buf.is_null() && cap > 0 {
            let n = bytes.len().min(cap);
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf as *mut u8, n);
            // always terminate
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, SageStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(SageStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        SageStatus::InvalidUtf8
    })
}

fn parse_config(json: Option<&str>) -> Result<TrainConfig, SageStatus> {
    let config: TrainConfig = match json {
        None => TrainConfig::default(),
        Some(raw) => serde_json::from_str(raw).map_err(|e| {
            set_error(&format!("config: {e}"));
            SageStatus::InvalidConfig
        })?,
    };
    config.validate().map_err(|e| {
        set_error(&e.to_string());
        SageStatus::InvalidConfig
    })?;
    Ok(config)
}

/// Build a trainer from a JSON config; a null config uses the defaults.
/// Returns null on failure (see `sage_last_error`).
///
/// # Safety
/// `config_json` must be null or a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_new(config_json: *const c_char) -> *mut SageTrainer {
    let json = if config_json.is_null() {
        None
    } else {
        match cstr_arg(config_json) {
            Ok(s) => Some(s),
            Err(_) => return std::ptr::null_mut(),
        }
    };
    let config = match parse_config(json) {
        Ok(c) => c,
        Err(_) => return std::ptr::null_mut(),
    };
    match Trainer::new(config) {
        Ok(inner) => Box::into_raw(Box::new(SageTrainer {
            inner,
            last_metrics: None,
        })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Release a trainer handle. Null is a no-op.
///
/// # Safety
/// `trainer` must be a pointer returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_free(trainer: *mut SageTrainer) {
    if !trainer.is_null() {
        drop(Box::from_raw(trainer));
    }
}

unsafe fn trainer_arg<'a>(ptr: *mut SageTrainer) -> Result<&'a mut SageTrainer, SageStatus> {
    if ptr.is_null() {
        set_error("null trainer handle");
        return Err(SageStatus::NullArgument);
    }
    Ok(&mut *ptr)
}

/// Advance the trainer by `steps` optimization steps.
///
/// # Safety
/// `trainer` must be a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_run(trainer: *mut SageTrainer, steps: u64) -> SageStatus {
    let handle = match trainer_arg(trainer) {
        Ok(h) => h,
        Err(s) => return s,
    };
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        for _ in 0..steps {
            let (metrics, _) = handle.inner.train_step()?;
            handle.last_metrics = Some(metrics);
        }
        Ok::<(), sage_core::SageError>(())
    }));
    match outcome {
        Ok(Ok(())) => SageStatus::Ok,
        Ok(Err(e)) => {
            set_error(&e.to_string());
            SageStatus::RuntimeFailure
        }
        Err(_) => {
            set_error("panic inside the training step");
            SageStatus::RuntimeFailure
        }
    }
}

/// Current step counter.
///
/// # Safety
/// `trainer` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_step_count(
    trainer: *mut SageTrainer,
    out: *mut u64,
) -> SageStatus {
    let handle = match trainer_arg(trainer) {
        Ok(h) => h,
        Err(s) => return s,
    };
    if out.is_null() {
        set_error("null output pointer");
        return SageStatus::NullArgument;
    }
    *out = handle.inner.step;
    SageStatus::Ok
}

/// Serialize the most recent step's metrics as JSON into `buf`.
/// `written` receives the full length including the NUL terminator; when
/// it exceeds `cap` the status is `BufferTooSmall` and the buffer is
/// left untouched.
///
/// # Safety
/// `trainer` must be a live handle; `buf` must point to `cap` writable
/// bytes; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_metrics_json(
    trainer: *mut SageTrainer,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> SageStatus {
    let handle = match trainer_arg(trainer) {
        Ok(h) => h,
        Err(s) => return s,
    };
    if written.is_null() {
        set_error("null output pointer");
        return SageStatus::NullArgument;
    }
    let Some(metrics) = &handle.last_metrics else {
        set_error("no step has run yet");
        return SageStatus::RuntimeFailure;
    };
    let json = match serde_json::to_string(metrics) {
        Ok(j) => j,
        Err(e) => {
            set_error(&e.to_string());
            return SageStatus::RuntimeFailure;
        }
    };
    let needed = json.len() + 1;
    *written = needed;
    if buf.is_null() || cap < needed {
        return SageStatus::BufferTooSmall;
    }
    std::ptr::copy_nonoverlapping(json.as_ptr(), buf as *mut u8, json.len());
    *buf.add(json.len()) = 0;
    SageStatus::Ok
}

/// Estimate the policy's consistency under one operation of the
/// trainer's pool on a fresh probe corpus.
///
/// # Safety
/// `trainer` must be a live handle; `op_id` a NUL-terminated string;
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_probe(
    trainer: *mut SageTrainer,
    op_id: *const c_char,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> SageStatus {
    let handle = match trainer_arg(trainer) {
        Ok(h) => h,
        Err(s) => return s,
    };
    let op_id = match cstr_arg(op_id) {
        Ok(s) => s,
        Err(s) => return s,
    };
    if out.is_null() {
        set_error("null output pointer");
        return SageStatus::NullArgument;
    }
    if samples == 0 {
        set_error("samples must be >= 1");
        return SageStatus::InvalidConfig;
    }
    let Some(record) = handle.inner.pool.get(op_id) else {
        set_error(&format!("unknown operation id `{op_id}`"));
        return SageStatus::InvalidConfig;
    };
    let op = record.op.clone();
    let env = handle.inner.config.env.clone();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut probe = Vec::with_capacity(samples);
    while probe.len() < samples {
        match sample_instance(&mut rng, &env) {
            Ok((scene, query, _)) => {
                if op.applicable(&scene, &query) {
                    probe.push((scene, query));
                }
            }
            Err(e) => {
                set_error(&e.to_string());
                return SageStatus::RuntimeFailure;
            }
        }
    }
    match sage_core::pool::estimate_consistency(&handle.inner.params, &op, &probe, 0) {
        Ok(report) => {
            *out = report.consistency;
            SageStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            SageStatus::RuntimeFailure
        }
    }
}

/// Write the trainer checkpoint files into a directory.
///
/// # Safety
/// `trainer` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_save(
    trainer: *mut SageTrainer,
    dir: *const c_char,
) -> SageStatus {
    let handle = match trainer_arg(trainer) {
        Ok(h) => h,
        Err(s) => return s,
    };
    let dir = match cstr_arg(dir) {
        Ok(s) => s,
        Err(s) => return s,
    };
    match save_checkpoint(Path::new(dir), &handle.inner) {
        Ok(_) => SageStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            SageStatus::RuntimeFailure
        }
    }
}

/// Load a trainer from a checkpoint file written by `sage_trainer_save`
/// (the `checkpoint.json` inside the directory). Returns null on
/// failure.
///
/// # Safety
/// `path` must be a NUL-terminated path string.
#[no_mangle]
pub unsafe extern "C" fn sage_trainer_load(path: *const c_char) -> *mut SageTrainer {
    let path = match cstr_arg(path) {
        Ok(s) => s,
        Err(_) => return std::ptr::null_mut(),
    };
    match load_checkpoint(Path::new(path)) {
        Ok(inner) => Box::into_raw(Box::new(SageTrainer {
            inner,
            last_metrics: None,
        })),
        Err(e) => {
            set_error(&e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Export a (scene, query, answer) corpus as JSONL. A null config uses
/// the default environment.
///
/// # Safety
/// `config_json` must be null or NUL-terminated; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sage_corpus_generate(
    config_json: *const c_char,
    seed: u64,
    count: usize,
    path: *const c_char,
) -> SageStatus {
    let json = if config_json.is_null() {
        None
    } else {
        match cstr_arg(config_json) {
            Ok(s) => Some(s),
            Err(s) => return s,
        }
    };
    let path = match cstr_arg(path) {
        Ok(s) => s,
        Err(s) => return s,
    };
    if count == 0 {
        set_error("count must be >= 1");
        return SageStatus::InvalidConfig;
    }
    let env = match parse_config(json) {
        Ok(c) => c.env,
        Err(s) => return s,
    };
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut records = Vec::with_capacity(count);
    while records.len() < count {
        match sample_instance(&mut rng, &env) {
            Ok((scene, query, truth)) => records.push(CorpusRecord::new(&scene, &query, truth)),
            Err(e) => {
                set_error(&e.to_string());
                return SageStatus::RuntimeFailure;
            }
        }
    }
    match write_jsonl(Path::new(path), &records) {
        Ok(()) => SageStatus::Ok,
        Err(e) => {
            set_error(&e.to_string());
            SageStatus::RuntimeFailure
        }
    }
}
