//! C interface to finj.
//!
//! Objects are handed out as opaque pointers and must be released with the
//! matching `*_free` / `*_stop` function. Every fallible call returns a
//! [`FinjStatus`]; on failure a description is available from
//! [`finj_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use finj::cli::{load_config, parse_targets};
use finj::controller::{inject, SessionPlan};
use finj::engine::{self, EngineHandle};
use finj::storage::load_workload;
use finj::wlgen::{generate_workload, load_spec, write_generated};
use finj::{format_core_list, validate_workload, Task};

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinjStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Parse = 5,
    Bind = 6,
    OutOfRange = 7,
    Generate = 8,
    Inject = 9,
    Panic = 10,
}

/// A running engine.
pub struct FinjEngine {
    handle: EngineHandle,
}

/// A workload loaded in memory.
pub struct FinjWorkload {
    tasks: Vec<Task>,
    args: Vec<CString>,
    cores: Vec<CString>,
}

/// One task of a workload. The strings belong to the workload and stay
/// valid until it is freed.
#[repr(C)]
pub struct FinjTask {
    pub timestamp: u64,
    pub duration: u64,
    pub seq_num: u64,
    pub is_fault: bool,
    pub args: *const c_char,
    /// Canonical core list such as "0-2,6"; empty when unpinned.
    pub cores: *const c_char,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    let c = CString::new(text).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: FinjStatus, message: impl Into<String>) -> FinjStatus {
    set_error(message);
    status
}

fn guard(f: impl FnOnce() -> FinjStatus) -> FinjStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(FinjStatus::Panic, "internal panic"),
    }
}

/// Reads a required C string argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn arg_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, FinjStatus> {
    if ptr.is_null() {
        return Err(fail(FinjStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| fail(FinjStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

/// # Safety
/// As for [`arg_str`].
unsafe fn opt_path(ptr: *const c_char, name: &str) -> Result<Option<PathBuf>, FinjStatus> {
    if ptr.is_null() {
        Ok(None)
    } else {
        arg_str(ptr, name).map(|s| Some(PathBuf::from(s)))
    }
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes, or 0 if
/// there is none.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn finj_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else {
            return 0;
        };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Starts an engine. `config_path` may be null for defaults; `port`
/// overrides the configured port when in 0..=65535 (0 picks a free port),
/// and is ignored when negative.
///
/// # Safety
/// `config_path` must be null or a NUL-terminated string; `out` must be
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn finj_engine_start(
    config_path: *const c_char,
    port: i32,
    out: *mut *mut FinjEngine,
) -> FinjStatus {
    guard(|| {
        if out.is_null() {
            return fail(FinjStatus::NullArgument, "out is null");
        }
        let path = match opt_path(config_path, "config_path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let mut config = match load_config(path.as_deref()) {
            Ok(c) => c,
            Err(e) => return fail(FinjStatus::Config, e.to_string()),
        };
        if port >= 0 {
            match u16::try_from(port) {
                Ok(p) => config.listen_port = p,
                Err(_) => return fail(FinjStatus::OutOfRange, format!("port {port} out of range")),
            }
        }
        match engine::start(&config) {
            Ok(handle) => {
                *out = Box::into_raw(Box::new(FinjEngine { handle }));
                FinjStatus::Ok
            }
            Err(e @ engine::EngineError::Bind { .. }) => fail(FinjStatus::Bind, e.to_string()),
            Err(e) => fail(FinjStatus::Config, e.to_string()),
        }
    })
}

/// Port the engine listens on, or 0 for a null handle.
///
/// # Safety
/// `engine` must be null or a live handle from [`finj_engine_start`].
#[no_mangle]
pub unsafe extern "C" fn finj_engine_port(engine: *const FinjEngine) -> u16 {
    engine.as_ref().map_or(0, |e| e.handle.port())
}

/// Stops the engine, terminating its tasks, and frees the handle.
///
/// # Safety
/// `engine` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn finj_engine_stop(engine: *mut FinjEngine) {
    if !engine.is_null() {
        let engine = Box::from_raw(engine);
        let _ = catch_unwind(AssertUnwindSafe(|| engine.handle.shutdown()));
    }
}

/// Loads a workload file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn finj_workload_open(
    path: *const c_char,
    out: *mut *mut FinjWorkload,
) -> FinjStatus {
    guard(|| {
        if out.is_null() {
            return fail(FinjStatus::NullArgument, "out is null");
        }
        let path = match arg_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let tasks = match load_workload(Path::new(path)) {
            Ok(t) => t,
            Err(e @ finj::storage::StorageError::Io { .. }) => {
                return fail(FinjStatus::Io, e.to_string())
            }
            Err(e) => return fail(FinjStatus::Parse, e.to_string()),
        };
        let to_c = |s: String| CString::new(s).unwrap_or_default();
        let args = tasks.iter().map(|t| to_c(t.args.clone())).collect();
        let cores = tasks
            .iter()
            .map(|t| to_c(format_core_list(t.cores.as_ref())))
            .collect();
        *out = Box::into_raw(Box::new(FinjWorkload { tasks, args, cores }));
        FinjStatus::Ok
    })
}

/// Number of tasks, or 0 for a null handle.
///
/// # Safety
/// `workload` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn finj_workload_len(workload: *const FinjWorkload) -> usize {
    workload.as_ref().map_or(0, |w| w.tasks.len())
}

/// Copies task `index` into `out`.
///
/// # Safety
/// `workload` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn finj_workload_task(
    workload: *const FinjWorkload,
    index: usize,
    out: *mut FinjTask,
) -> FinjStatus {
    let (Some(w), false) = (workload.as_ref(), out.is_null()) else {
        return fail(FinjStatus::NullArgument, "workload or out is null");
    };
    let Some(t) = w.tasks.get(index) else {
        return fail(
            FinjStatus::OutOfRange,
            format!("index {index} beyond {} tasks", w.tasks.len()),
        );
    };
    *out = FinjTask {
        timestamp: t.timestamp,
        duration: t.duration,
        seq_num: t.seq_num,
        is_fault: t.is_fault,
        args: w.args[index].as_ptr(),
        cores: w.cores[index].as_ptr(),
    };
    FinjStatus::Ok
}

/// Counts validation findings (duplicate sequence numbers, empty
/// commands, ...). Zero means the workload is well formed.
///
/// # Safety
/// `workload` must be a live handle; `findings` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn finj_workload_validate(
    workload: *const FinjWorkload,
    findings: *mut usize,
) -> FinjStatus {
    let (Some(w), false) = (workload.as_ref(), findings.is_null()) else {
        return fail(FinjStatus::NullArgument, "workload or findings is null");
    };
    let found = validate_workload(&w.tasks);
    if let Some(first) = found.first() {
        set_error(first.to_string());
    }
    *findings = found.len();
    FinjStatus::Ok
}

/// Frees a workload handle.
///
/// # Safety
/// `workload` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn finj_workload_free(workload: *mut FinjWorkload) {
    if !workload.is_null() {
        drop(Box::from_raw(workload));
    }
}

/// Generates `workload.csv` and `workload_probe.csv` in `out_dir` from a
/// JSON spec. `tasks` (may be null) receives the workload's task count.
///
/// # Safety
/// String arguments must be NUL-terminated; `tasks` null or writable.
#[no_mangle]
pub unsafe extern "C" fn finj_generate(
    spec_path: *const c_char,
    out_dir: *const c_char,
    tasks: *mut usize,
) -> FinjStatus {
    guard(|| {
        let (spec_path, out_dir) = match (arg_str(spec_path, "spec_path"), arg_str(out_dir, "out_dir")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let result = load_spec(Path::new(spec_path)).and_then(|spec| {
            let count = generate_workload(&spec)?.0.len();
            write_generated(&spec, Path::new(out_dir))?;
            Ok(count)
        });
        match result {
            Ok(count) => {
                if !tasks.is_null() {
                    *tasks = count;
                }
                FinjStatus::Ok
            }
            Err(e) => fail(FinjStatus::Generate, e.to_string()),
        }
    })
}

/// Runs a full injection session. `targets` is a comma-separated
/// `host:port` list; `config_path` may be null. `exit_code` (may be null)
/// receives 0 for a clean session and 1 otherwise.
///
/// # Safety
/// String arguments must be NUL-terminated (config_path may be null);
/// `exit_code` null or writable.
#[no_mangle]
pub unsafe extern "C" fn finj_inject(
    workload: *const c_char,
    targets: *const c_char,
    config_path: *const c_char,
    exit_code: *mut i32,
) -> FinjStatus {
    guard(|| {
        let (workload, targets) = match (arg_str(workload, "workload"), arg_str(targets, "targets")) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let config = match opt_path(config_path, "config_path").map(|p| load_config(p.as_deref())) {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => return fail(FinjStatus::Config, e.to_string()),
            Err(s) => return s,
        };
        let targets = match parse_targets(targets) {
            Ok(t) => t,
            Err(e) => return fail(FinjStatus::Parse, e),
        };
        match inject(&SessionPlan::new(workload, targets), &config) {
            Ok(summary) => {
                if !exit_code.is_null() {
                    *exit_code = summary.exit_code();
                }
                FinjStatus::Ok
            }
            Err(e) => fail(FinjStatus::Inject, e.to_string()),
        }
    })
}
