//! C ABI over the `cosinet` library.
//!
//! Datasets and models are opaque handles created by `*_load` and released by
//! the matching `*_free`. Every fallible call returns a [`CosinetStatus`];
//! on failure [`cosinet_last_error`] describes the most recent error on the
//! calling thread. Outputs are written through caller-provided pointers and
//! only on success, except that `*_load` sets the handle output to null first.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cosinet::baselines::Baseline;
use cosinet::corpus::{self, QuestionGroup};
use cosinet::embed::EmbeddingTable;
use cosinet::eval::{evaluate, RankingMetrics};
use cosinet::model::io::load_model;
use cosinet::model::{ContextKind, Cosinet, CosinetConfig, ModelScorer};
use cosinet::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosinetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    ModelFile = 5,
    Config = 6,
    Invalid = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosinetBaseline {
    WordOverlap = 0,
    ReciprocalRank = 1,
    WordOverlapRank = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CosinetContext {
    None = 0,
    Rnn = 1,
    Birnn = 2,
    Lstm = 3,
    Bilstm = 4,
}

/// Dataset-level metrics in percent.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CosinetMetrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
    pub n_questions: usize,
    pub wall_seconds: f64,
}

/// Answered question groups loaded from a WikiQA TSV or JSONL file.
pub struct CosinetDataset {
    groups: Vec<QuestionGroup>,
}

/// A trained model together with its stored word vectors.
pub struct CosinetModel {
    model: Cosinet<f32>,
    table: EmbeddingTable,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Failure(CosinetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => CosinetStatus::Io,
            Error::Embeddings { .. } | Error::MissingColumn { .. } | Error::BadRow { .. } | Error::BadRecord { .. } => {
                CosinetStatus::Parse
            }
            Error::ModelFile(_) => CosinetStatus::ModelFile,
            Error::Config(_) => CosinetStatus::Config,
            _ => CosinetStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: CosinetStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CosinetStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CosinetStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CosinetStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(fail(CosinetStatus::NullPointer, "path is null"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(CosinetStatus::InvalidUtf8, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(CosinetStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(CosinetStatus::NullPointer, format!("{what} is null")))
}

fn metrics(m: RankingMetrics) -> CosinetMetrics {
    CosinetMetrics {
        map: m.map,
        mrr: m.mrr,
        p_at_1: m.p_at_1,
        n_questions: m.n_questions,
        wall_seconds: m.wall_seconds,
    }
}

impl From<CosinetContext> for ContextKind {
    fn from(c: CosinetContext) -> Self {
        match c {
            CosinetContext::None => ContextKind::None,
            CosinetContext::Rnn => ContextKind::Rnn,
            CosinetContext::Birnn => ContextKind::Birnn,
            CosinetContext::Lstm => ContextKind::Lstm,
            CosinetContext::Bilstm => ContextKind::Bilstm,
        }
    }
}

impl From<CosinetBaseline> for Baseline {
    fn from(b: CosinetBaseline) -> Self {
        match b {
            CosinetBaseline::WordOverlap => Baseline::WordOverlap,
            CosinetBaseline::ReciprocalRank => Baseline::ReciprocalRank,
            CosinetBaseline::WordOverlapRank => Baseline::WordOverlapRank,
        }
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cosinet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cosinet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset; `.tsv` files are read as WikiQA, anything else as JSONL.
/// Unanswered questions are dropped.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cosinet_dataset_load(path: *const c_char, out_dataset: *mut *mut CosinetDataset) -> CosinetStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        *slot = ptr::null_mut();
        let path = path_arg(path)?;
        let ingested = corpus::ingest_auto(&path)?;
        *slot = Box::into_raw(Box::new(CosinetDataset { groups: ingested.groups }));
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must come from [`cosinet_dataset_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cosinet_dataset_free(dataset: *mut CosinetDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Number of question groups.
///
/// # Safety
/// `dataset` must be a live handle or null; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_dataset_len(dataset: *const CosinetDataset, out_len: *mut usize) -> CosinetStatus {
    guard(|| {
        let n = handle(dataset, "dataset")?.groups.len();
        *out(out_len, "out_len")? = n;
        Ok(())
    })
}

/// Number of candidates of group `index`.
///
/// # Safety
/// `dataset` must be a live handle or null; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_dataset_group_len(
    dataset: *const CosinetDataset,
    index: usize,
    out_len: *mut usize,
) -> CosinetStatus {
    guard(|| {
        let groups = &handle(dataset, "dataset")?.groups;
        let g = groups
            .get(index)
            .ok_or_else(|| fail(CosinetStatus::OutOfRange, format!("group {index} of {}", groups.len())))?;
        *out(out_len, "out_len")? = g.len();
        Ok(())
    })
}

/// Scores `dataset` with a lexical baseline.
///
/// # Safety
/// `dataset` must be a live handle or null; `out_metrics` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_baseline_evaluate(
    dataset: *const CosinetDataset,
    method: CosinetBaseline,
    out_metrics: *mut CosinetMetrics,
) -> CosinetStatus {
    guard(|| {
        let ds = handle(dataset, "dataset")?;
        let slot = out(out_metrics, "out_metrics")?;
        *slot = metrics(evaluate(&Baseline::from(method), &ds.groups)?);
        Ok(())
    })
}

/// Trainable parameter count of the paper configuration with `context`.
///
/// # Safety
/// `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_param_count(context: CosinetContext, out_count: *mut usize) -> CosinetStatus {
    guard(|| {
        *out(out_count, "out_count")? = CosinetConfig::with_context(context.into()).param_count();
        Ok(())
    })
}

/// Loads a model file written by `cosinet train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_model` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn cosinet_model_load(path: *const c_char, out_model: *mut *mut CosinetModel) -> CosinetStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        *slot = ptr::null_mut();
        let (model, table) = load_model(path_arg(path)?)?;
        *slot = Box::into_raw(Box::new(CosinetModel { model, table }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`cosinet_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cosinet_model_free(model: *mut CosinetModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trainable parameter count of a loaded model.
///
/// # Safety
/// `model` must be a live handle or null; `out_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_model_param_count(model: *const CosinetModel, out_count: *mut usize) -> CosinetStatus {
    guard(|| {
        let n = handle(model, "model")?.model.param_count();
        *out(out_count, "out_count")? = n;
        Ok(())
    })
}

/// Evaluates a model on every group of `dataset`.
///
/// # Safety
/// Handles must be live or null; `out_metrics` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_model_evaluate(
    model: *const CosinetModel,
    dataset: *const CosinetDataset,
    out_metrics: *mut CosinetMetrics,
) -> CosinetStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let slot = out(out_metrics, "out_metrics")?;
        let scorer = ModelScorer {
            model: &m.model,
            table: &m.table,
        };
        *slot = metrics(evaluate(&scorer, &ds.groups)?);
        Ok(())
    })
}

/// Writes one score per candidate of group `index`, in candidate order, into
/// `scores[0..capacity]`. `out_written` receives the candidate count; when it
/// exceeds `capacity` the call fails with `BUFFER_TOO_SMALL` and writes no
/// scores, so callers can size the buffer and retry.
///
/// # Safety
/// Handles must be live or null; `scores` must have room for `capacity`
/// doubles; `out_written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cosinet_model_score_group(
    model: *const CosinetModel,
    dataset: *const CosinetDataset,
    index: usize,
    scores: *mut f64,
    capacity: usize,
    out_written: *mut usize,
) -> CosinetStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = handle(dataset, "dataset")?;
        let written = out(out_written, "out_written")?;
        let g = ds
            .groups
            .get(index)
            .ok_or_else(|| fail(CosinetStatus::OutOfRange, format!("group {index} of {}", ds.groups.len())))?;
        *written = g.len();
        if g.len() > capacity {
            return Err(fail(
                CosinetStatus::BufferTooSmall,
                format!("group has {} candidates, buffer holds {capacity}", g.len()),
            ));
        }
        if scores.is_null() {
            return Err(fail(CosinetStatus::NullPointer, "scores is null"));
        }
        let s = m.model.score_group(g, &m.table)?;
        ptr::copy_nonoverlapping(s.as_ptr(), scores, s.len());
        Ok(())
    })
}
