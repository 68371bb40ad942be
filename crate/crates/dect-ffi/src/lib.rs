//! C ABI for the dect pipeline.
//!
//! Objects cross the boundary as opaque handles; every fallible call returns
//! a `DectStatus` and leaves a human-readable message for
//! `dect_last_error()`. Strings are UTF-8, NUL-terminated, and owned by the
//! side that allocated them.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use dect::config::RunConfig;
use dect::corpus::{load_corpus, write_corpus, Corpus, CorpusFormat, Label};
use dect::pipeline;
use dect::planted::planted_corpus;

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DectStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidInput = 4,
    RunFailed = 5,
}

/// Binary classification metrics with AD as the positive class.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DectMetrics {
    pub accuracy: f64,
    pub f1: f64,
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
    pub n: u64,
}

/// Opaque transcript-corpus handle.
pub struct DectCorpus {
    inner: Corpus,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: impl AsRef<str>) {
    let sanitized = message.as_ref().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn guard(body: impl FnOnce() -> DectStatus) -> DectStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            DectStatus::RunFailed
        }
    }
}

unsafe fn path_arg<'a>(ptr: *const c_char) -> Result<&'a Path, DectStatus> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(DectStatus::NullArgument);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(Path::new(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(DectStatus::InvalidUtf8)
        }
    }
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dect_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the last error message recorded on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dect_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Loads a JSONL corpus file into a new handle.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_load(
    path: *const c_char,
    out: *mut *mut DectCorpus,
) -> DectStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return DectStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match load_corpus(path, CorpusFormat::Jsonl) {
            Ok(corpus) => {
                *out = Box::into_raw(Box::new(DectCorpus { inner: corpus }));
                DectStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DectStatus::Io
            }
        }
    })
}

/// Builds the deterministic planted synthetic corpus.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_planted(
    n: u64,
    seed: u64,
    out: *mut *mut DectCorpus,
) -> DectStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return DectStatus::NullArgument;
        }
        let corpus = planted_corpus(n as usize, seed);
        *out = Box::into_raw(Box::new(DectCorpus { inner: corpus }));
        DectStatus::Ok
    })
}

/// Number of transcripts in the corpus; 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle from this library.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_len(corpus: *const DectCorpus) -> u64 {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).inner.len() as u64
}

/// Number of transcripts carrying the given label ("AD" or "NC").
///
/// # Safety
/// `corpus` must be null or a live handle; `label` a valid string.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_count_label(
    corpus: *const DectCorpus,
    label: *const c_char,
) -> u64 {
    if corpus.is_null() || label.is_null() {
        return 0;
    }
    let label = match CStr::from_ptr(label).to_str() {
        Ok("AD") => Label::AD,
        Ok("NC") => Label::NC,
        _ => return 0,
    };
    (*corpus).inner.count(label) as u64
}

/// Writes the corpus as JSONL.
///
/// # Safety
/// `corpus` must be a live handle and `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_save(
    corpus: *const DectCorpus,
    path: *const c_char,
) -> DectStatus {
    guard(|| {
        if corpus.is_null() {
            set_error("null corpus handle");
            return DectStatus::NullArgument;
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        match write_corpus(&(*corpus).inner, path) {
            Ok(()) => DectStatus::Ok,
            Err(e) => {
                set_error(e.to_string());
                DectStatus::Io
            }
        }
    })
}

/// Releases a corpus handle. Null is ignored.
///
/// # Safety
/// `corpus` must be null or a handle produced by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn dect_corpus_free(corpus: *mut DectCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Runs the pipeline described by a config file (extract, augment, train one
/// seed, evaluate) and writes the held-out metrics into `out`.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dect_run_train_eval(
    config_path: *const c_char,
    out: *mut DectMetrics,
) -> DectStatus {
    guard(|| {
        if out.is_null() {
            set_error("null output pointer");
            return DectStatus::NullArgument;
        }
        let path = match path_arg(config_path) {
            Ok(p) => p,
            Err(status) => return status,
        };
        let cfg = match RunConfig::parse_file(path) {
            Ok(cfg) => cfg,
            Err(e) => {
                set_error(e.to_string());
                return DectStatus::InvalidInput;
            }
        };
        match pipeline::run_train_eval_once(&cfg) {
            Ok(report) => {
                *out = DectMetrics {
                    accuracy: report.accuracy,
                    f1: report.f1,
                    true_pos: report.confusion.tp as u64,
                    false_pos: report.confusion.fp as u64,
                    false_neg: report.confusion.fn_ as u64,
                    true_neg: report.confusion.tn as u64,
                    n: report.n as u64,
                };
                DectStatus::Ok
            }
            Err(e) => {
                set_error(e.to_string());
                DectStatus::RunFailed
            }
        }
    })
}
