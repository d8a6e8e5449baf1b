//! C ABI over the infopot pipeline.
//!
//! Every function returns an [`InfopotStatus`]. On failure the message is
//! available from [`infopot_last_error`] on the same thread. Strings handed
//! out through `out_json` parameters are owned by the caller and must be
//! released with [`infopot_string_free`]. Pipelines are opaque handles
//! released with [`infopot_pipeline_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use infopot::corpus::{chunk_document, normalize_text, Document};
use infopot::evaluator::{parse_answer_letter, Answer};
use infopot::mcq::parse_generation_output;
use infopot::pipeline::{Overrides, Pipeline, Stage};
use infopot::quality_filter::{jaccard, rouge_l, tokenize, TokenSet};
use infopot::scoring::{information_potential, ContingencyTable};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InfopotStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// The quantity is not defined for the input, e.g. IP with no
    /// question answered in either condition.
    Undefined = 4,
    Pipeline = 5,
    Panic = 6,
}

/// Opaque run handle.
pub struct InfopotPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(InfopotStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> InfopotStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => InfopotStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            InfopotStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(
            InfopotStatus::NullPointer,
            format!("{name} is null"),
        ));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            InfopotStatus::InvalidUtf8,
            format!("{name} is not valid UTF-8"),
        )
    })
}

fn out_arg<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    // SAFETY: caller passes either null or a valid, writable pointer.
    unsafe { p.as_mut() }
        .ok_or_else(|| Failure(InfopotStatus::NullPointer, format!("{name} is null")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " "))
        .expect("nul bytes replaced")
        .into_raw()
}

fn write_json(out: *mut *mut c_char, value: &impl serde::Serialize) -> FfiResult<()> {
    let slot = out_arg(out, "out_json")?;
    let json = serde_json::to_string(value)
        .map_err(|e| Failure(InfopotStatus::Pipeline, e.to_string()))?;
    *slot = to_c_string(json);
    Ok(())
}

fn pipeline_err(e: impl std::fmt::Display) -> Failure {
    Failure(InfopotStatus::Pipeline, e.to_string())
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn infopot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static version string; do not free.
#[no_mangle]
pub extern "C" fn infopot_version() -> *const c_char {
    static VERSION: &CStr =
        match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
            Ok(v) => v,
            Err(_) => panic!("version has no interior nul"),
        };
    VERSION.as_ptr()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn infopot_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Jaccard similarity of the lowercase alphanumeric token sets of `a` and `b`.
///
/// # Safety
/// `a` and `b` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_jaccard(
    a: *const c_char,
    b: *const c_char,
    out: *mut f64,
) -> InfopotStatus {
    guard(|| {
        let (a, b) = (str_arg(a, "a")?, str_arg(b, "b")?);
        *out_arg(out, "out")? = jaccard(&TokenSet::from_text(a), &TokenSet::from_text(b));
        Ok(())
    })
}

/// ROUGE-L F1 of `candidate` against `reference`.
///
/// # Safety
/// Both strings must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_rouge_l(
    reference: *const c_char,
    candidate: *const c_char,
    out: *mut f64,
) -> InfopotStatus {
    guard(|| {
        let r = tokenize(str_arg(reference, "reference")?);
        let c = tokenize(str_arg(candidate, "candidate")?);
        *out_arg(out, "out")? = rouge_l(&r, &c);
        Ok(())
    })
}

/// Information potential from the four contingency cells. Returns
/// `Undefined` when every question was missed in both conditions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_information_potential(
    both_correct: u64,
    context_only: u64,
    direct_only: u64,
    both_incorrect: u64,
    out: *mut f64,
) -> InfopotStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        let t =
            ContingencyTable::from_cells(both_correct, context_only, direct_only, both_incorrect);
        let ip = information_potential(&t)
            .map_err(|e| Failure(InfopotStatus::Undefined, e.to_string()))?;
        *slot = ip.value;
        Ok(())
    })
}

/// Reduces an evaluator reply to `'A'`..`'D'`, or `0` when no letter can
/// be read.
///
/// # Safety
/// `raw` must be nul-terminated; `out_letter` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_parse_answer_letter(
    raw: *const c_char,
    out_letter: *mut c_char,
) -> InfopotStatus {
    guard(|| {
        let raw = str_arg(raw, "raw")?;
        *out_arg(out_letter, "out_letter")? = match parse_answer_letter(raw) {
            Answer::Given(l) => l.as_char() as c_char,
            Answer::Unparsed => 0,
        };
        Ok(())
    })
}

/// Parses generator output into `{chunk_id, raw_text, parsed, rejects}`
/// JSON.
///
/// # Safety
/// Strings must be nul-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_parse_mcqs_json(
    chunk_id: *const c_char,
    raw: *const c_char,
    out_json: *mut *mut c_char,
) -> InfopotStatus {
    guard(|| {
        let batch = parse_generation_output(str_arg(chunk_id, "chunk_id")?, str_arg(raw, "raw")?)
            .map_err(|e| Failure(InfopotStatus::InvalidArgument, e.to_string()))?;
        write_json(out_json, &batch)
    })
}

/// Splits `text` into chunks of `chunk_words` words and returns them as a
/// JSON array.
///
/// # Safety
/// Strings must be nul-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_chunk_json(
    doc_id: *const c_char,
    text: *const c_char,
    chunk_words: usize,
    out_json: *mut *mut c_char,
) -> InfopotStatus {
    guard(|| {
        if chunk_words == 0 {
            return Err(Failure(
                InfopotStatus::InvalidArgument,
                "chunk_words must be positive".into(),
            ));
        }
        let doc = Document {
            doc_id: str_arg(doc_id, "doc_id")?.to_string(),
            source_path: String::new(),
            title: None,
            text: normalize_text(str_arg(text, "text")?),
            synthetic: false,
        };
        write_json(out_json, &chunk_document(&doc, chunk_words))
    })
}

/// Opens the run described by a TOML config file.
///
/// # Safety
/// `config_path` must be nul-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_pipeline_open(
    config_path: *const c_char,
    out: *mut *mut InfopotPipeline,
) -> InfopotStatus {
    guard(|| {
        let slot = out_arg(out, "out")?;
        *slot = ptr::null_mut();
        let path = str_arg(config_path, "config_path")?;
        let inner = Pipeline::open(Path::new(path), &Overrides::default()).map_err(pipeline_err)?;
        *slot = Box::into_raw(Box::new(InfopotPipeline { inner }));
        Ok(())
    })
}

unsafe fn handle<'a>(p: *mut InfopotPipeline) -> FfiResult<&'a mut InfopotPipeline> {
    p.as_mut()
        .ok_or_else(|| Failure(InfopotStatus::NullPointer, "pipeline is null".into()))
}

/// Runs one stage by name (`chunk`, `generate`, ...) and returns its
/// outcome as JSON.
///
/// # Safety
/// `pipeline` must come from [`infopot_pipeline_open`]; `stage` must be
/// nul-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_pipeline_run_stage(
    pipeline: *mut InfopotPipeline,
    stage: *const c_char,
    out_json: *mut *mut c_char,
) -> InfopotStatus {
    guard(|| {
        let p = handle(pipeline)?;
        let stage: Stage = str_arg(stage, "stage")?
            .parse()
            .map_err(|e: String| Failure(InfopotStatus::InvalidArgument, e))?;
        let outcome = p.inner.run_stage(stage).map_err(pipeline_err)?;
        write_json(out_json, &outcome)
    })
}

/// Runs every stage in order; returns the list of outcomes as JSON.
///
/// # Safety
/// `pipeline` must come from [`infopot_pipeline_open`]; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_pipeline_run_all(
    pipeline: *mut InfopotPipeline,
    out_json: *mut *mut c_char,
) -> InfopotStatus {
    guard(|| {
        let outcomes = handle(pipeline)?.inner.run_all().map_err(pipeline_err)?;
        write_json(out_json, &outcomes)
    })
}

/// Writes the report bundle for a scored run and returns it as JSON.
///
/// # Safety
/// `pipeline` must come from [`infopot_pipeline_open`]; `out_json` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn infopot_pipeline_report_json(
    pipeline: *mut InfopotPipeline,
    out_json: *mut *mut c_char,
) -> InfopotStatus {
    guard(|| {
        let (bundle, _) = handle(pipeline)?.inner.report().map_err(pipeline_err)?;
        write_json(out_json, &bundle)
    })
}

/// Releases a pipeline handle. Null is ignored.
///
/// # Safety
/// `pipeline` must come from [`infopot_pipeline_open`] and not have been
/// freed already.
#[no_mangle]
pub unsafe extern "C" fn infopot_pipeline_free(pipeline: *mut InfopotPipeline) {
    if !pipeline.is_null() {
        drop(Box::from_raw(pipeline));
    }
}
