//! C ABI over `qtr_core`.
//!
//! All objects cross the boundary as opaque handles created by a `*_new` or
//! `*_load` function and released by the matching `*_free`. Functions return
//! a [`QtrStatus`]; on failure a message is available from
//! [`qtr_last_error`] on the same thread until the next call. Strings
//! returned as `char *` are owned by the caller and released with
//! [`qtr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::Arc;

use qtr_core::backends::scripted::{ScriptedLlm, ScriptedVision};
use qtr_core::backends::Ports;
use qtr_core::controller::{replay_session, run_session, Ablation, SessionConfig, SessionResult, SessionTrace};
use qtr_core::error::Error;
use qtr_core::harness::{default_suite, grade, load_suite, run_suite, RunOptions, SuiteWorld};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QtrStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Io = 4,
    Format = 5,
    Session = 6,
    Replay = 7,
    Panic = 8,
}

/// A loaded question suite.
pub struct QtrSuite {
    worlds: Vec<SuiteWorld>,
}

/// Session configuration.
pub struct QtrConfig {
    inner: SessionConfig,
}

/// Outcome of one session, including its trace.
pub struct QtrResult {
    inner: SessionResult,
    correct: Option<bool>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &Error) -> QtrStatus {
    match e {
        Error::Invalid(_) | Error::Model(_) => QtrStatus::InvalidArgument,
        Error::Io { .. } => QtrStatus::Io,
        Error::Format { .. } => QtrStatus::Format,
        Error::Replay(_) => QtrStatus::Replay,
        Error::Port(_) | Error::SessionAborted { .. } => QtrStatus::Session,
    }
}

struct Fail(QtrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

/// Runs `f`, converting failures and panics into a status plus last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> QtrStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QtrStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QtrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(QtrStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(QtrStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref()
        .ok_or_else(|| Fail(QtrStatus::NullArgument, format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut()
        .ok_or_else(|| Fail(QtrStatus::NullArgument, format!("{name} is null")))
}

fn owned_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the most recent failure on this thread, or NULL. Valid until
/// the next qtr call on this thread; do not free.
#[no_mangle]
pub extern "C" fn qtr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qtr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn qtr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads the built-in three-world suite.
///
/// # Safety
/// `out` must be a valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn qtr_suite_builtin(out: *mut *mut QtrSuite) -> QtrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(QtrSuite {
            worlds: default_suite(),
        }));
        Ok(())
    })
}

/// Loads a suite from a world document, an array of them, or a directory.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_suite_load(path: *const c_char, out: *mut *mut QtrSuite) -> QtrStatus {
    guard(|| {
        let path = PathBuf::from(str_arg(path, "path")?);
        let out = out_arg(out, "out")?;
        let worlds = load_suite(&path)?;
        *out = Box::into_raw(Box::new(QtrSuite { worlds }));
        Ok(())
    })
}

/// Number of questions across all worlds of the suite; 0 for NULL.
///
/// # Safety
/// `suite` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_suite_question_count(suite: *const QtrSuite) -> usize {
    suite
        .as_ref()
        .map_or(0, |s| s.worlds.iter().map(|w| w.questions.len()).sum())
}

/// # Safety
/// `suite` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qtr_suite_free(suite: *mut QtrSuite) {
    if !suite.is_null() {
        drop(Box::from_raw(suite));
    }
}

/// Default session configuration.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_config_new(out: *mut *mut QtrConfig) -> QtrStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = Box::into_raw(Box::new(QtrConfig {
            inner: SessionConfig::default(),
        }));
        Ok(())
    })
}

/// Configuration parsed from JSON; missing fields take defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_config_from_json(json: *const c_char, out: *mut *mut QtrConfig) -> QtrStatus {
    guard(|| {
        let text = str_arg(json, "json")?;
        let out = out_arg(out, "out")?;
        let inner: SessionConfig =
            serde_json::from_str(text).map_err(|e| Fail(QtrStatus::Format, format!("config: {e}")))?;
        inner.validate()?;
        *out = Box::into_raw(Box::new(QtrConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_config_set_seed(cfg: *mut QtrConfig, seed: u64) -> QtrStatus {
    guard(|| {
        out_arg(cfg, "cfg")?.inner.seed = seed;
        Ok(())
    })
}

/// Disables one component: "no-rtp", "no-tm" or "no-tcr".
///
/// # Safety
/// `cfg` must be a live handle; `name` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qtr_config_add_ablation(cfg: *mut QtrConfig, name: *const c_char) -> QtrStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let cfg = out_arg(cfg, "cfg")?;
        let a: Ablation = name.parse().map_err(|e| Fail(QtrStatus::InvalidArgument, e))?;
        cfg.inner.ablation.insert(a);
        Ok(())
    })
}

/// # Safety
/// `cfg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qtr_config_free(cfg: *mut QtrConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Answers one suite question with the scripted ports of its world.
///
/// # Safety
/// `suite` and `cfg` must be live handles, `question_id` a NUL-terminated
/// string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_run_question(
    suite: *const QtrSuite,
    question_id: *const c_char,
    cfg: *const QtrConfig,
    out: *mut *mut QtrResult,
) -> QtrStatus {
    guard(|| {
        let suite = ref_arg(suite, "suite")?;
        let id = str_arg(question_id, "question_id")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out_arg(out, "out")?;
        let (world, q) = suite
            .worlds
            .iter()
            .find_map(|w| w.question(id).map(|q| (w, q)))
            .ok_or_else(|| Fail(QtrStatus::NotFound, format!("no question {id:?}")))?;
        let shared = Arc::new(world.world.clone());
        let video = shared.video(&q.query.video).map_err(Error::from)?.descriptor.clone();
        let ports = Ports::new(
            Arc::new(ScriptedLlm::new(Arc::clone(&shared), &video.id)),
            Arc::new(ScriptedVision::new(shared)),
        );
        let inner = run_session(&q.query, &video, &cfg.inner, &ports)?;
        let correct = Some(grade(&inner.final_answer.answer, &q.gold_answer, &q.query));
        *out = Box::into_raw(Box::new(QtrResult { inner, correct }));
        Ok(())
    })
}

/// Re-runs a recorded trace file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_replay_trace(path: *const c_char, out: *mut *mut QtrResult) -> QtrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let trace = SessionTrace::read(path)?;
        let inner = replay_session(&trace)?;
        *out = Box::into_raw(Box::new(QtrResult { inner, correct: None }));
        Ok(())
    })
}

/// Final answer text (caller frees), or NULL for a NULL handle.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_answer(result: *const QtrResult) -> *mut c_char {
    result
        .as_ref()
        .map_or(ptr::null_mut(), |r| owned_string(&r.inner.final_answer.answer))
}

/// Confidence score 1..=100 of the final answer; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_confidence(result: *const QtrResult) -> u8 {
    result.as_ref().map_or(0, |r| r.inner.final_answer.confidence.score)
}

/// Frames embedded during the session; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_total_frames(result: *const QtrResult) -> u64 {
    result.as_ref().map_or(0, |r| r.inner.total_frames)
}

/// Iterations run; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_iterations(result: *const QtrResult) -> u32 {
    result.as_ref().map_or(0, |r| r.inner.iterations_used)
}

/// 1 if the answer matched the gold answer, 0 if not, -1 when unknown
/// (replayed results, NULL).
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_correct(result: *const QtrResult) -> i32 {
    match result.as_ref().and_then(|r| r.correct) {
        Some(true) => 1,
        Some(false) => 0,
        None => -1,
    }
}

/// Hex SHA-256 of the trace (caller frees), or NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_trace_hash(result: *const QtrResult) -> *mut c_char {
    result
        .as_ref()
        .map_or(ptr::null_mut(), |r| owned_string(&r.inner.trace.hash()))
}

/// Whole result as JSON (caller frees), or NULL.
///
/// # Safety
/// `result` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_to_json(result: *const QtrResult) -> *mut c_char {
    result.as_ref().map_or(ptr::null_mut(), |r| {
        serde_json::to_string(&r.inner).map_or(ptr::null_mut(), |s| owned_string(&s))
    })
}

/// Writes the session trace as NDJSON.
///
/// # Safety
/// `result` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_write_trace(result: *const QtrResult, path: *const c_char) -> QtrStatus {
    guard(|| {
        let result = ref_arg(result, "result")?;
        let path = str_arg(path, "path")?;
        result.inner.trace.write(path)?;
        Ok(())
    })
}

/// # Safety
/// `result` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qtr_result_free(result: *mut QtrResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Runs the whole suite and returns the report as JSON through `out_json`
/// (caller frees). `threads` of 0 uses one worker per core.
///
/// # Safety
/// `suite` and `cfg` must be live handles; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn qtr_run_suite_json(
    suite: *const QtrSuite,
    cfg: *const QtrConfig,
    threads: usize,
    out_json: *mut *mut c_char,
) -> QtrStatus {
    guard(|| {
        let suite = ref_arg(suite, "suite")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let out = out_arg(out_json, "out_json")?;
        let opts = RunOptions {
            threads,
            trace_dir: None,
        };
        let report = run_suite(&suite.worlds, &cfg.inner, &opts)?;
        let json = serde_json::to_string(&report).map_err(|e| Fail(QtrStatus::Format, e.to_string()))?;
        *out = owned_string(&json);
        Ok(())
    })
}
