//! C ABI over probekit: read-only activation stores through an opaque handle,
//! plus the scalar analysis primitives.
//!
//! Every function returns a [`PkStatus`]; on failure a message is available
//! from [`pk_last_error`] on the same thread until the next call fails.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use probekit::layers::{saturation_layer, LayerCurve};
use probekit::probe::normalized_perf;
use probekit::stats::{normal_cdf_inverse, stouffer_combine, welch_t_test};
use probekit::store::{ActivationStore, StoreError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Numeric = 7,
    Panic = 8,
}

/// Opaque handle to an opened `.mps` store.
pub struct PkStore {
    inner: ActivationStore,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PkTTest {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_one_sided: f64,
    pub p_two_sided: f64,
    pub mean_a: f64,
    pub mean_b: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul removed"));
}

fn fail(status: PkStatus, msg: impl Into<String>) -> PkStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PkStatus) -> PkStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PkStatus::Panic, "internal panic"))
}

fn store_status(e: &StoreError) -> PkStatus {
    match e {
        StoreError::Io { .. } => PkStatus::Io,
        StoreError::LayerOutOfRange { .. } => PkStatus::OutOfRange,
        _ => PkStatus::Corrupt,
    }
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize) -> Option<&'a [T]> {
    if len == 0 {
        Some(&[])
    } else if ptr.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(ptr, len))
    }
}

/// Message of the last failure on this thread; empty if none. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Open and verify a store. On success `*out` owns a handle that must be
/// released with [`pk_store_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pk_store_open(path: *const c_char, out: *mut *mut PkStore) -> PkStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(PkStatus::NullPointer, "null argument");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PkStatus::InvalidArgument, "path is not UTF-8");
        };
        match ActivationStore::open(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PkStore { inner }));
                PkStatus::Ok
            }
            Err(e) => fail(store_status(&e), e.to_string()),
        }
    })
}

/// Release a handle. Null is ignored.
///
/// # Safety
/// `store` must come from [`pk_store_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pk_store_free(store: *mut PkStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Writes the layer count, hidden size and sentence count; any out pointer
/// may be null.
///
/// # Safety
/// `store` must be a live handle; non-null out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_store_shape(
    store: *const PkStore,
    n_layers: *mut usize,
    hidden_dim: *mut usize,
    n_sentences: *mut usize,
) -> PkStatus {
    guard(|| {
        let Some(s) = store.as_ref() else {
            return fail(PkStatus::NullPointer, "null store");
        };
        let h = s.inner.header();
        if let Some(p) = n_layers.as_mut() {
            *p = h.n_layers;
        }
        if let Some(p) = hidden_dim.as_mut() {
            *p = h.hidden_dim;
        }
        if let Some(p) = n_sentences.as_mut() {
            *p = h.n_sentences();
        }
        PkStatus::Ok
    })
}

/// Copy one layer (`n_sentences * hidden_dim` floats, row-major, rows in
/// header order) into `buf`, which holds `len` floats.
///
/// # Safety
/// `store` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn pk_store_read_layer(
    store: *const PkStore,
    layer: usize,
    buf: *mut f32,
    len: usize,
) -> PkStatus {
    guard(|| {
        let Some(s) = store.as_ref() else {
            return fail(PkStatus::NullPointer, "null store");
        };
        let m = match s.inner.read_layer(layer) {
            Ok(m) => m,
            Err(e) => return fail(store_status(&e), e.to_string()),
        };
        if len < m.data.len() {
            return fail(
                PkStatus::BufferTooSmall,
                format!("buffer holds {len} floats, layer needs {}", m.data.len()),
            );
        }
        if buf.is_null() {
            return fail(PkStatus::NullPointer, "null buffer");
        }
        std::ptr::copy_nonoverlapping(m.data.as_ptr(), buf, m.data.len());
        PkStatus::Ok
    })
}

/// `(raw - baseline) / (1 - baseline)`; `*degenerate` is set and the value
/// is 0 when the baseline is within 1e-9 of 1.
///
/// # Safety
/// Out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_normalized_perf(raw: f64, baseline: f64, value: *mut f64, degenerate: *mut bool) -> PkStatus {
    guard(|| {
        if value.is_null() || degenerate.is_null() {
            return fail(PkStatus::NullPointer, "null out pointer");
        }
        let r = normalized_perf(raw, baseline);
        *value = r.value;
        *degenerate = r.degenerate;
        PkStatus::Ok
    })
}

/// First layer reaching `ratio * peak` and the earliest argmax. A curve with
/// a non-positive peak reports `*saturation = -1`.
///
/// # Safety
/// `values` must be valid for `n` reads; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_saturation_layer(
    values: *const f64,
    n: usize,
    ratio: f64,
    saturation: *mut i64,
    maximum: *mut usize,
) -> PkStatus {
    guard(|| {
        let Some(v) = slice(values, n) else {
            return fail(PkStatus::NullPointer, "null values");
        };
        if saturation.is_null() || maximum.is_null() {
            return fail(PkStatus::NullPointer, "null out pointer");
        }
        match saturation_layer(&LayerCurve::from_values("ffi", v.to_vec()), ratio) {
            Ok(r) => {
                *saturation = r.saturation_layer.map_or(-1, |l| l as i64);
                *maximum = r.maximum_layer;
                PkStatus::Ok
            }
            Err(e) => fail(PkStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Welch's t-test of `a` against `b`.
///
/// # Safety
/// `a`/`b` must be valid for `na`/`nb` reads and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn pk_welch_t_test(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut PkTTest) -> PkStatus {
    guard(|| {
        let (Some(a), Some(b)) = (slice(a, na), slice(b, nb)) else {
            return fail(PkStatus::NullPointer, "null sample");
        };
        let Some(out) = out.as_mut() else {
            return fail(PkStatus::NullPointer, "null out pointer");
        };
        match welch_t_test(a, b) {
            Ok(r) => {
                *out = PkTTest {
                    t_statistic: r.t_statistic,
                    degrees_of_freedom: r.degrees_of_freedom,
                    p_one_sided: r.p_one_sided,
                    p_two_sided: r.p_two_sided,
                    mean_a: r.mean_a,
                    mean_b: r.mean_b,
                };
                PkStatus::Ok
            }
            Err(e) => fail(PkStatus::Numeric, e.to_string()),
        }
    })
}

/// Stouffer combination of one-sided p-values.
///
/// # Safety
/// `p` must be valid for `n` reads; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_stouffer_combine(p: *const f64, n: usize, z: *mut f64, combined_p: *mut f64) -> PkStatus {
    guard(|| {
        let Some(p) = slice(p, n) else {
            return fail(PkStatus::NullPointer, "null p-values");
        };
        if z.is_null() || combined_p.is_null() {
            return fail(PkStatus::NullPointer, "null out pointer");
        }
        match stouffer_combine(p) {
            Ok(c) => {
                *z = c.combined_z;
                *combined_p = c.combined_p;
                PkStatus::Ok
            }
            Err(e) => fail(PkStatus::Numeric, e.to_string()),
        }
    })
}

/// Inverse standard normal CDF for `p` in (0, 1).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn pk_normal_cdf_inverse(p: f64, out: *mut f64) -> PkStatus {
    guard(|| {
        if out.is_null() {
            return fail(PkStatus::NullPointer, "null out pointer");
        }
        match normal_cdf_inverse(p) {
            Ok(z) => {
                *out = z;
                PkStatus::Ok
            }
            Err(e) => fail(PkStatus::OutOfRange, e.to_string()),
        }
    })
}
