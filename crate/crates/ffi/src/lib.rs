//! C ABI over the titant feature store, model files and online scorer.
//!
//! Every function returns a [`TitantStatus`]. On failure the message is kept
//! per thread and can be read with [`titant_last_error`]. Handles are opaque
//! and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use titant::detect::Model;
use titant::ingest::BASIC_FEATURES;
use titant::serve::{response_json, FeatureSource, Scorer};
use titant::store::FeatureStore;
use titant::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TitantStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Arity = 5,
    NotFound = 6,
    NoVersions = 7,
    NoModel = 8,
    Config = 9,
    BufferTooSmall = 10,
    Corrupt = 11,
    Internal = 99,
}

/// Feature store handle.
pub struct TitantStore {
    inner: Arc<FeatureStore>,
}

/// Loaded model handle.
pub struct TitantModel {
    inner: Model,
}

/// Scorer handle bound to one store.
pub struct TitantScorer {
    inner: Scorer,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> TitantStatus {
    match e {
        Error::Parse { .. } | Error::FeatureArity { .. } => TitantStatus::Parse,
        Error::Arity { .. } | Error::NodeOutOfRange { .. } | Error::IncompleteRow { .. } => TitantStatus::Arity,
        Error::Config(_) | Error::Empty(_) | Error::DegenerateLabels | Error::DuplicateVersion(_) => {
            TitantStatus::Config
        }
        Error::NoVersions => TitantStatus::NoVersions,
        Error::VersionNotFound(_) => TitantStatus::NotFound,
        Error::Corrupt { .. } => TitantStatus::Corrupt,
        Error::NoModel => TitantStatus::NoModel,
        Error::Io(_) => TitantStatus::Io,
    }
}

fn fail(status: TitantStatus, msg: impl Into<String>) -> TitantStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, turning errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), TitantStatus>) -> TitantStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TitantStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(TitantStatus::Internal, "panic inside titant"),
    }
}

fn check(r: titant::Result<()>) -> Result<(), TitantStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, TitantStatus> {
    if p.is_null() {
        return Err(fail(TitantStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TitantStatus::InvalidUtf8, "argument is not UTF-8"))
}

unsafe fn ref_arg<'a, T>(p: *const T) -> Result<&'a T, TitantStatus> {
    p.as_ref().ok_or_else(|| fail(TitantStatus::NullPointer, "null handle"))
}

/// Copies `s` plus a terminating nul into `buf`; `needed` receives the full size.
unsafe fn write_str(s: &str, buf: *mut c_char, cap: usize, needed: *mut usize) -> Result<(), TitantStatus> {
    let n = s.len() + 1;
    if let Some(out) = needed.as_mut() {
        *out = n;
    }
    if buf.is_null() || cap < n {
        return Err(fail(TitantStatus::BufferTooSmall, format!("need {n} bytes")));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn titant_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Width of the basic feature family.
#[no_mangle]
pub extern "C" fn titant_basic_features() -> usize {
    BASIC_FEATURES
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn titant_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Opens (creating if needed) the store directory at `path`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn titant_store_open(path: *const c_char, out: *mut *mut TitantStore) -> TitantStatus {
    guard(|| {
        let path = str_arg(path)?;
        if out.is_null() {
            return Err(fail(TitantStatus::NullPointer, "null out pointer"));
        }
        let store = FeatureStore::open(Path::new(path)).map_err(|e| fail(status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(TitantStore { inner: Arc::new(store) }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`titant_store_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn titant_store_free(store: *mut TitantStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Writes the latest version date (`YYYY-MM-DD`) into `buf`.
///
/// # Safety
/// `store` must be a live handle; `buf` must hold `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn titant_store_latest_date(
    store: *const TitantStore,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> TitantStatus {
    guard(|| {
        let store = ref_arg(store)?;
        let date = store
            .inner
            .latest_date()
            .ok_or_else(|| fail(TitantStatus::NoVersions, "store has no versions"))?;
        write_str(&date.to_string(), buf, cap, needed)
    })
}

/// Reads `user`'s row from the latest version. `basic` must hold 52 values
/// and `embedding` `emb_cap`; `emb_len` receives the embedding width and
/// `found` 0 or 1. Buffers are untouched when the user is absent.
///
/// # Safety
/// All pointers must be valid for the stated sizes.
#[no_mangle]
pub unsafe extern "C" fn titant_store_get_latest(
    store: *const TitantStore,
    user: *const c_char,
    basic: *mut f64,
    embedding: *mut f64,
    emb_cap: usize,
    emb_len: *mut usize,
    found: *mut i32,
) -> TitantStatus {
    guard(|| {
        let store = ref_arg(store)?;
        let user = str_arg(user)?;
        if basic.is_null() || emb_len.is_null() || found.is_null() {
            return Err(fail(TitantStatus::NullPointer, "null output buffer"));
        }
        let row = store
            .inner
            .get_latest(user)
            .map_err(|e| fail(status_of(&e), e.to_string()))?;
        let Some(row) = row else {
            *found = 0;
            *emb_len = 0;
            return Ok(());
        };
        *emb_len = row.embedding.len();
        if row.embedding.len() > emb_cap || (embedding.is_null() && !row.embedding.is_empty()) {
            return Err(fail(
                TitantStatus::BufferTooSmall,
                format!("embedding needs {} values", row.embedding.len()),
            ));
        }
        ptr::copy_nonoverlapping(row.basic.as_ptr(), basic, BASIC_FEATURES);
        if !row.embedding.is_empty() {
            ptr::copy_nonoverlapping(row.embedding.as_ptr(), embedding, row.embedding.len());
        }
        *found = 1;
        Ok(())
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn titant_model_load(path: *const c_char, out: *mut *mut TitantModel) -> TitantStatus {
    guard(|| {
        let path = str_arg(path)?;
        if out.is_null() {
            return Err(fail(TitantStatus::NullPointer, "null out pointer"));
        }
        let file = std::fs::File::open(path).map_err(|e| fail(TitantStatus::Io, e.to_string()))?;
        let model = Model::read(std::io::BufReader::new(file)).map_err(|e| fail(status_of(&e), e.to_string()))?;
        *out = Box::into_raw(Box::new(TitantModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`titant_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn titant_model_free(model: *mut TitantModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of raw features the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn titant_model_arity(model: *const TitantModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.feature_arity)
}

/// Scores one raw feature vector of length `n`.
///
/// # Safety
/// `x` must hold `n` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn titant_model_predict(
    model: *const TitantModel,
    x: *const f64,
    n: usize,
    out: *mut f64,
) -> TitantStatus {
    guard(|| {
        let model = ref_arg(model)?;
        if x.is_null() || out.is_null() {
            return Err(fail(TitantStatus::NullPointer, "null buffer"));
        }
        let xs = std::slice::from_raw_parts(x, n);
        *out = model
            .inner
            .predict(xs)
            .map_err(|e| fail(status_of(&e), e.to_string()))?;
        Ok(())
    })
}

/// Creates a scorer reading from `store`. The store handle may be freed
/// afterwards; the scorer keeps its own reference.
///
/// # Safety
/// `store` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn titant_scorer_new(store: *const TitantStore, out: *mut *mut TitantScorer) -> TitantStatus {
    guard(|| {
        let store = ref_arg(store)?;
        if out.is_null() {
            return Err(fail(TitantStatus::NullPointer, "null out pointer"));
        }
        let scorer = Scorer::new(Arc::clone(&store.inner) as Arc<dyn FeatureSource>);
        *out = Box::into_raw(Box::new(TitantScorer { inner: scorer }));
        Ok(())
    })
}

/// # Safety
/// `scorer` must come from [`titant_scorer_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn titant_scorer_free(scorer: *mut TitantScorer) {
    if !scorer.is_null() {
        drop(Box::from_raw(scorer));
    }
}

/// Atomically replaces the scorer's model. On failure the previous model
/// stays active.
///
/// # Safety
/// `scorer` must be a live handle and `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn titant_scorer_load_model(
    scorer: *const TitantScorer,
    path: *const c_char,
    threshold: f64,
) -> TitantStatus {
    guard(|| {
        let scorer = ref_arg(scorer)?;
        let path = str_arg(path)?;
        check(scorer.inner.load_model(Path::new(path), threshold).map(|_| ()))
    })
}

/// Scores one JSON request and writes the JSON response into `buf`.
/// Scoring failures are reported inside the response, not as a status.
///
/// # Safety
/// `scorer` must be a live handle, `request` nul-terminated and `buf`
/// valid for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn titant_scorer_score_json(
    scorer: *const TitantScorer,
    request: *const c_char,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> TitantStatus {
    guard(|| {
        let scorer = ref_arg(scorer)?;
        let request = str_arg(request)?;
        let resp = scorer.inner.score_line(request);
        write_str(&response_json(&resp), buf, cap, needed)
    })
}
