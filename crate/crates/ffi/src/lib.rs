//! C ABI over the nnose datastore and fusion routines.
//!
//! Every fallible function returns an [`NnoseStatus`]; on failure a
//! human-readable message is kept per thread and can be copied out with
//! [`nnose_last_error_message`]. Stores are opaque handles released with
//! [`nnose_store_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nnose::datastore::{load_datastore, Datastore, DatastoreError, SearchMode};
use nnose::fusion::{self, FusionError, FusionParams};
use nnose::model::{Distribution3, Embedding, LabelTag};

/// Result codes shared by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnoseStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    NoIndex = 6,
    Panic = 7,
}

/// Label ordinals as stored on disk.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnoseLabel {
    O = 0,
    B = 1,
    I = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NnoseSearchMode {
    Exact = 0,
    Clustered = 1,
}

/// Opaque datastore handle.
pub struct NnoseStore {
    inner: Datastore,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(status: NnoseStatus, msg: impl Into<String>) -> NnoseStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> NnoseStatus) -> NnoseStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => fail(NnoseStatus::Panic, "internal panic"),
    }
}

fn datastore_status(e: &DatastoreError) -> NnoseStatus {
    match e {
        DatastoreError::Io(_) => NnoseStatus::Io,
        DatastoreError::MagicMismatch(_) | DatastoreError::VersionMismatch(_) | DatastoreError::CorruptFile(_) => {
            NnoseStatus::Format
        }
        DatastoreError::DimensionMismatch { .. } => NnoseStatus::DimensionMismatch,
        DatastoreError::NoCentroids => NnoseStatus::NoIndex,
        _ => NnoseStatus::InvalidArgument,
    }
}

fn fusion_status(e: &FusionError) -> NnoseStatus {
    match e {
        FusionError::Search(inner) => datastore_status(inner),
        _ => NnoseStatus::InvalidArgument,
    }
}

/// Checks the raw integer value of an `NnoseSearchMode`.
fn mode_of(mode: u32) -> Result<SearchMode, NnoseStatus> {
    match mode {
        m if m == NnoseSearchMode::Exact as u32 => Ok(SearchMode::Exact),
        m if m == NnoseSearchMode::Clustered as u32 => Ok(SearchMode::Clustered),
        other => Err(fail(NnoseStatus::InvalidArgument, format!("unknown search mode {other}"))),
    }
}

fn label_of(tag: LabelTag) -> NnoseLabel {
    match tag {
        LabelTag::O => NnoseLabel::O,
        LabelTag::B => NnoseLabel::B,
        LabelTag::I => NnoseLabel::I,
    }
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

fn distribution(p: &[f64]) -> Result<Distribution3, NnoseStatus> {
    Distribution3::from_array([p[0], p[1], p[2]])
        .map_err(|e| fail(NnoseStatus::InvalidArgument, format!("invalid distribution: {e}")))
}

fn query_embedding(store: &Datastore, query: &[f64]) -> Result<Embedding, NnoseStatus> {
    if query.len() != store.dim() {
        return Err(fail(
            NnoseStatus::DimensionMismatch,
            format!("query has {} values, store dimension is {}", query.len(), store.dim()),
        ));
    }
    Embedding::new(query.to_vec()).map_err(|e| fail(NnoseStatus::InvalidArgument, e.to_string()))
}

/// Loads an NDS1 file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn nnose_store_load(path: *const c_char, out: *mut *mut NnoseStore) -> NnoseStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(NnoseStatus::NullPointer, "path and out must be non-null");
        }
        *out = std::ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(NnoseStatus::InvalidArgument, "path is not valid UTF-8");
        };
        match load_datastore(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(NnoseStore { inner }));
                NnoseStatus::Ok
            }
            Err(e) => fail(datastore_status(&e), format!("{path}: {e}")),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `store` must come from [`nnose_store_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nnose_store_free(store: *mut NnoseStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Key dimension, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nnose_store_dim(store: *const NnoseStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.dim())
}

/// Entry count, or 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nnose_store_len(store: *const NnoseStore) -> usize {
    store.as_ref().map_or(0, |s| s.inner.len())
}

/// Writes up to `k` neighbors of a raw query, nearest first. `mode` is an
/// `NnoseSearchMode` value. Each output array must hold `k` elements;
/// `*out_count` receives the number written.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `query` holds `dim` values.
#[no_mangle]
pub unsafe extern "C" fn nnose_store_search(
    store: *const NnoseStore,
    query: *const f64,
    dim: usize,
    k: usize,
    mode: u32,
    out_indices: *mut usize,
    out_distances: *mut f64,
    out_labels: *mut NnoseLabel,
    out_count: *mut usize,
) -> NnoseStatus {
    guard(|| {
        let (Some(store), Some(query)) = (store.as_ref(), slice(query, dim)) else {
            return fail(NnoseStatus::NullPointer, "store and query must be non-null");
        };
        if out_indices.is_null() || out_distances.is_null() || out_labels.is_null() || out_count.is_null() {
            return fail(NnoseStatus::NullPointer, "output pointers must be non-null");
        }
        *out_count = 0;
        if k == 0 {
            return fail(NnoseStatus::InvalidArgument, "k must be positive");
        }
        let q = match query_embedding(&store.inner, query) {
            Ok(q) => q,
            Err(s) => return s,
        };
        let mode = match mode_of(mode) {
            Ok(m) => m,
            Err(s) => return s,
        };
        let hits = match store.inner.search(&q, k, mode) {
            Ok(h) => h,
            Err(e) => return fail(datastore_status(&e), e.to_string()),
        };
        for (i, n) in hits.iter().enumerate() {
            *out_indices.add(i) = n.entry_index;
            *out_distances.add(i) = n.distance;
            *out_labels.add(i) = label_of(n.value);
        }
        *out_count = hits.len();
        NnoseStatus::Ok
    })
}

/// Fused distribution for one token: retrieval from `store`, then
/// interpolation with the base distribution `base` (O, B, I order). `mode`
/// is an `NnoseSearchMode` value.
///
/// # Safety
/// `query` holds `dim` values, `base` and `out` hold 3; `out_label` is valid.
#[no_mangle]
pub unsafe extern "C" fn nnose_infer_token(
    store: *const NnoseStore,
    query: *const f64,
    dim: usize,
    base: *const f64,
    k: usize,
    lambda: f64,
    temperature: f64,
    mode: u32,
    out: *mut f64,
    out_label: *mut NnoseLabel,
) -> NnoseStatus {
    guard(|| {
        let (Some(store), Some(query), Some(base)) = (store.as_ref(), slice(query, dim), slice(base, 3)) else {
            return fail(NnoseStatus::NullPointer, "store, query and base must be non-null");
        };
        if out.is_null() || out_label.is_null() {
            return fail(NnoseStatus::NullPointer, "output pointers must be non-null");
        }
        let params = match FusionParams::new(k, lambda, temperature) {
            Ok(p) => p,
            Err(e) => return fail(fusion_status(&e), e.to_string()),
        };
        let (q, base, mode) = match (query_embedding(&store.inner, query), distribution(base), mode_of(mode)) {
            (Ok(q), Ok(b), Ok(m)) => (q, b, m),
            (Err(s), _, _) | (_, Err(s), _) | (_, _, Err(s)) => return s,
        };
        let fused = store
            .inner
            .search(&q, params.k, mode)
            .map_err(FusionError::from)
            .and_then(|n| fusion::knn_distribution(&n, params.temperature))
            .and_then(|p| fusion::interpolate(&p, &base, params.lambda));
        match fused {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.as_array().as_ptr(), out, 3);
                *out_label = label_of(p.argmax());
                NnoseStatus::Ok
            }
            Err(e) => fail(fusion_status(&e), e.to_string()),
        }
    })
}

/// Temperature-scaled kNN label distribution over `n` neighbors; labels
/// are `NnoseLabel` values.
///
/// # Safety
/// `labels` and `distances` hold `n` values; `out` holds 3.
#[no_mangle]
pub unsafe extern "C" fn nnose_knn_distribution(
    labels: *const u32,
    distances: *const f64,
    n: usize,
    temperature: f64,
    out: *mut f64,
) -> NnoseStatus {
    guard(|| {
        let (Some(labels), Some(distances)) = (slice(labels, n), slice(distances, n)) else {
            return fail(NnoseStatus::NullPointer, "labels and distances must be non-null");
        };
        if out.is_null() {
            return fail(NnoseStatus::NullPointer, "out must be non-null");
        }
        let mut neighbors = Vec::with_capacity(n);
        for (&l, &d) in labels.iter().zip(distances) {
            match u8::try_from(l).map_err(|_| ()).and_then(|o| LabelTag::from_ordinal(o).map_err(|_| ())) {
                Ok(tag) => neighbors.push((tag, d)),
                Err(()) => return fail(NnoseStatus::InvalidArgument, format!("unknown label {l}")),
            }
        }
        match fusion::knn_distribution_from(neighbors.iter().copied(), temperature) {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.as_array().as_ptr(), out, 3);
                NnoseStatus::Ok
            }
            Err(e) => fail(fusion_status(&e), e.to_string()),
        }
    })
}

/// `lambda * p_knn + (1 - lambda) * p_se`, all in O, B, I order.
///
/// # Safety
/// Each pointer addresses 3 values.
#[no_mangle]
pub unsafe extern "C" fn nnose_interpolate(
    p_knn: *const f64,
    p_se: *const f64,
    lambda: f64,
    out: *mut f64,
) -> NnoseStatus {
    guard(|| {
        let (Some(a), Some(b)) = (slice(p_knn, 3), slice(p_se, 3)) else {
            return fail(NnoseStatus::NullPointer, "inputs must be non-null");
        };
        if out.is_null() {
            return fail(NnoseStatus::NullPointer, "out must be non-null");
        }
        let (a, b) = match (distribution(a), distribution(b)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match fusion::interpolate(&a, &b, lambda) {
            Ok(p) => {
                std::ptr::copy_nonoverlapping(p.as_array().as_ptr(), out, 3);
                NnoseStatus::Ok
            }
            Err(e) => fail(fusion_status(&e), e.to_string()),
        }
    })
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to fit) and returns the full message length
/// excluding the terminator. Pass a null `buf` to query the length.
///
/// # Safety
/// `buf` must be null or writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn nnose_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nnose_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
