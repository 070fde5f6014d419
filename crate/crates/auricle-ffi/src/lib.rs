//! C ABI over the auricle core: opaque handles, status codes, and a
//! thread-local last-error message. The header is generated by cbindgen into
//! `include/auricle.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use auricle::bench::{majority_class_accuracy, read_dataset, Dataset};
use auricle::builder::{iqr_filter, peak_dbfs, welch_p_value, ClassStats};
use auricle::error::Error;
use auricle::imagine::{
    GenLimits, HashedNgramEncoder, ImagineEngine, Projector, ProjectorConfig, TextEncoder,
};
use auricle::pitchworld::PitchWorld;
use auricle::tinylm::Checkpoint;

/// Call outcome. Anything except `Ok` leaves a message readable via
/// `auricle_last_error`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuricleStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Parse = 3,
    Validation = 4,
    Domain = 5,
    Config = 6,
    Dependency = 7,
    Runtime = 8,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<Vec<u8>>) {
    let cstring = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

fn status_of(err: &Error) -> AuricleStatus {
    match err {
        Error::Io { .. } => AuricleStatus::Io,
        Error::Parse { .. } => AuricleStatus::Parse,
        Error::Validation { .. } => AuricleStatus::Validation,
        Error::Domain(_) | Error::EmptySpan(_) | Error::MalformedSpan(_) => AuricleStatus::Domain,
        Error::Config(_) | Error::Template(_) | Error::TokenConflict(_) => AuricleStatus::Config,
        Error::Dependency(_) => AuricleStatus::Dependency,
        _ => AuricleStatus::Runtime,
    }
}

fn fail(err: Error) -> AuricleStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

fn invalid(msg: &str) -> AuricleStatus {
    set_error(msg);
    AuricleStatus::InvalidArgument
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn auricle_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}

/// Returns the last error message for this thread as a newly allocated
/// string (free with `auricle_string_free`), or NULL when no error is set.
#[no_mangle]
pub extern "C" fn auricle_last_error() -> *mut c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Frees a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must have been returned by an auricle function documented to require
/// `auricle_string_free`, and must not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn auricle_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Peak level in dBFS of `len` samples in [-1, 1].
///
/// # Safety
/// `samples` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn auricle_peak_dbfs(
    samples: *const f64,
    len: usize,
    out: *mut f64,
) -> AuricleStatus {
    if samples.is_null() || out.is_null() {
        return invalid("samples and out must be non-null");
    }
    let slice = std::slice::from_raw_parts(samples, len);
    match peak_dbfs(slice) {
        Ok(db) => {
            *out = db;
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// IQR outlier filter. Survivors are written to `out` (capacity at least
/// `len`) in input order; the survivor count goes to `out_len`.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must have room for
/// `len` doubles; `out_len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn auricle_iqr_filter(
    values: *const f64,
    len: usize,
    out: *mut f64,
    out_len: *mut usize,
) -> AuricleStatus {
    if values.is_null() || out.is_null() || out_len.is_null() {
        return invalid("values, out and out_len must be non-null");
    }
    let slice = std::slice::from_raw_parts(values, len);
    if !slice.iter().all(|v| v.is_finite()) {
        return invalid("values must be finite");
    }
    match iqr_filter(slice) {
        Ok(kept) => {
            for (i, v) in kept.iter().enumerate() {
                *out.add(i) = *v;
            }
            *out_len = kept.len();
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Two-sided Welch t-test p-value from per-class summaries (count, mean,
/// unbiased variance).
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn auricle_welch_p_value(
    n1: usize,
    mean1: f64,
    var1: f64,
    n2: usize,
    mean2: f64,
    var2: f64,
    out: *mut f64,
) -> AuricleStatus {
    if out.is_null() {
        return invalid("out must be non-null");
    }
    let a = ClassStats {
        label: "a".into(),
        values: vec![],
        n: n1,
        mean: mean1,
        variance: var1,
    };
    let b = ClassStats {
        label: "b".into(),
        values: vec![],
        n: n2,
        mean: mean2,
        variance: var2,
    };
    match welch_p_value(&a, &b) {
        Ok(p) => {
            *out = p;
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Opaque benchmark dataset handle.
pub struct AuricleDataset {
    inner: Dataset,
}

unsafe fn cstr_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AuricleStatus> {
    if ptr.is_null() {
        return Err(invalid(&format!("{name} must be non-null")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not valid UTF-8")))
}

/// Opens a JSONL dataset file and validates it.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. The handle
/// must be released with `auricle_dataset_free`.
#[no_mangle]
pub unsafe extern "C" fn auricle_dataset_open(
    path: *const c_char,
    out: *mut *mut AuricleDataset,
) -> AuricleStatus {
    if out.is_null() {
        return invalid("out must be non-null");
    }
    let path = match cstr_arg(path, "path") {
        Ok(p) => p,
        Err(status) => return status,
    };
    match read_dataset(Path::new(path)) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(AuricleDataset { inner }));
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Number of items in the dataset.
///
/// # Safety
/// `dataset` must be a live handle from `auricle_dataset_open`.
#[no_mangle]
pub unsafe extern "C" fn auricle_dataset_len(dataset: *const AuricleDataset) -> usize {
    if dataset.is_null() {
        return 0;
    }
    (*dataset).inner.len()
}

/// Task name of the dataset (static string; do not free).
///
/// # Safety
/// `dataset` must be a live handle from `auricle_dataset_open`.
#[no_mangle]
pub unsafe extern "C" fn auricle_dataset_task(dataset: *const AuricleDataset) -> *const c_char {
    if dataset.is_null() {
        return ptr::null();
    }
    let name: &'static str = match (*dataset).inner.task {
        auricle::bench::TaskKind::Pitch => "pitch\0",
        auricle::bench::TaskKind::Duration => "duration\0",
        auricle::bench::TaskKind::Loudness => "loudness\0",
        auricle::bench::TaskKind::AnimalSound => "animal_sound\0",
        auricle::bench::TaskKind::AuditoryContext => "auditory_context\0",
    };
    name.as_ptr() as *const c_char
}

/// Majority-class accuracy of the dataset's gold answers.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn auricle_dataset_majority_accuracy(
    dataset: *const AuricleDataset,
    out: *mut f64,
) -> AuricleStatus {
    if dataset.is_null() || out.is_null() {
        return invalid("dataset and out must be non-null");
    }
    match majority_class_accuracy(&(*dataset).inner) {
        Ok(acc) => {
            *out = acc;
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Releases a dataset handle. NULL is ignored.
///
/// # Safety
/// `dataset` must be NULL or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn auricle_dataset_free(dataset: *mut AuricleDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Opaque decoding engine: model, tokenizer, projector and encoder.
pub struct AuricleEngine {
    inner: ImagineEngine,
}

fn parse_encoder_spec(spec: Option<&str>) -> Result<Box<dyn TextEncoder>, Error> {
    let spec = spec.unwrap_or("ngram:16");
    if let Some(dim) = spec.strip_prefix("ngram:") {
        let dim: usize = dim
            .parse()
            .map_err(|_| Error::Config(format!("bad encoder dimension in '{spec}'")))?;
        return Ok(Box::new(HashedNgramEncoder::new(dim)));
    }
    if let Some(rest) = spec.strip_prefix("pitch-world:") {
        let (path, dim) = match rest.rsplit_once(':') {
            Some((p, d)) => (p, d.parse::<usize>().map_err(|_| {
                Error::Config(format!("bad encoder dimension in '{spec}'"))
            })?),
            None => (rest, 16),
        };
        let world = PitchWorld::load(path)?;
        return Ok(Box::new(world.encoder(dim)));
    }
    Err(Error::Config(format!(
        "unknown encoder spec '{spec}'; use 'ngram:<dim>' or 'pitch-world:<path>[:<dim>]'"
    )))
}

/// Opens an engine from a model checkpoint, an optional projector checkpoint
/// (NULL gives a fresh seeded projector) and an optional encoder spec
/// (`"ngram:<dim>"` or `"pitch-world:<path>[:<dim>]"`, NULL means `ngram:16`).
///
/// # Safety
/// String arguments must be NUL-terminated or NULL where documented; `out`
/// must be writable. The handle must be released with `auricle_engine_free`.
#[no_mangle]
pub unsafe extern "C" fn auricle_engine_open(
    model_checkpoint: *const c_char,
    projector_checkpoint: *const c_char,
    encoder_spec: *const c_char,
    out: *mut *mut AuricleEngine,
) -> AuricleStatus {
    if out.is_null() {
        return invalid("out must be non-null");
    }
    let model_path = match cstr_arg(model_checkpoint, "model_checkpoint") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let projector_path = if projector_checkpoint.is_null() {
        None
    } else {
        match cstr_arg(projector_checkpoint, "projector_checkpoint") {
            Ok(p) => Some(p),
            Err(status) => return status,
        }
    };
    let encoder_spec_str = if encoder_spec.is_null() {
        None
    } else {
        match cstr_arg(encoder_spec, "encoder_spec") {
            Ok(s) => Some(s),
            Err(status) => return status,
        }
    };

    let build = || -> Result<ImagineEngine, Error> {
        let (model, tokenizer) = Checkpoint::load(model_path)?.restore()?;
        let encoder = parse_encoder_spec(encoder_spec_str)?;
        let projector = match projector_path {
            Some(p) => Projector::load(p)?,
            None => Projector::new(ProjectorConfig {
                d_enc: encoder.dim(),
                d_hidden: 32,
                d_model: model.cfg.d_model,
                seed: 0,
            })?,
        };
        ImagineEngine::new(model, tokenizer, projector, encoder)
    };
    match build() {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(AuricleEngine { inner }));
            AuricleStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Runs imagination decoding on a prompt and returns the full trace as a JSON
/// string (free with `auricle_string_free`).
///
/// # Safety
/// `engine` must be a live handle; `prompt` must be NUL-terminated;
/// `out_trace_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn auricle_engine_generate(
    engine: *const AuricleEngine,
    prompt: *const c_char,
    max_new_tokens: usize,
    max_imagination_events: usize,
    out_trace_json: *mut *mut c_char,
) -> AuricleStatus {
    if engine.is_null() || out_trace_json.is_null() {
        return invalid("engine and out_trace_json must be non-null");
    }
    let prompt = match cstr_arg(prompt, "prompt") {
        Ok(p) => p,
        Err(status) => return status,
    };
    let engine = &(*engine).inner;
    let ids = engine.encode_prompt(prompt);
    let limits = GenLimits {
        max_new_tokens,
        max_imagination_events,
    };
    match engine.generate_with_imagination(&ids, &limits) {
        Ok(trace) => {
            let json = serde_json::to_string(&trace).expect("trace serialization");
            match CString::new(json) {
                Ok(cstring) => {
                    *out_trace_json = cstring.into_raw();
                    AuricleStatus::Ok
                }
                Err(_) => invalid("trace JSON contained a NUL byte"),
            }
        }
        Err(e) => fail(e),
    }
}

/// Releases an engine handle. NULL is ignored.
///
/// # Safety
/// `engine` must be NULL or a live handle; it must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn auricle_engine_free(engine: *mut AuricleEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}
