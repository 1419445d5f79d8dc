use std::ffi::{CStr, CString};
use std::ptr;

use probekit::store::{SentenceId, StoreData, StoreHeader};
use probekit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(pk_last_error()) }.to_string_lossy().into_owned()
}

fn write_small_store(dir: &std::path::Path) -> (CString, Vec<f32>) {
    let header = StoreHeader::new(
        "tiny",
        2,
        3,
        vec![SentenceId::good("p0"), SentenceId::bad("p0")],
    );
    let payload: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
    let path = dir.join("tiny.mps");
    StoreData::from_payload(header, payload.clone()).unwrap().write(&path).unwrap();
    (CString::new(path.to_str().unwrap()).unwrap(), payload)
}

#[test]
fn store_round_trip_through_handle() {
    let dir = tempfile::tempdir().unwrap();
    let (path, payload) = write_small_store(dir.path());
    let mut store = ptr::null_mut();
    unsafe {
        assert_eq!(pk_store_open(path.as_ptr(), &mut store), PkStatus::Ok);
        let (mut l, mut d, mut n) = (0usize, 0usize, 0usize);
        assert_eq!(pk_store_shape(store, &mut l, &mut d, &mut n), PkStatus::Ok);
        assert_eq!((l, d, n), (2, 3, 2));

        let mut buf = vec![0f32; 6];
        assert_eq!(pk_store_read_layer(store, 1, buf.as_mut_ptr(), buf.len()), PkStatus::Ok);
        assert_eq!(buf, payload[6..]);

        assert_eq!(pk_store_read_layer(store, 2, buf.as_mut_ptr(), buf.len()), PkStatus::OutOfRange);
        assert!(!last_error().is_empty());
        assert_eq!(pk_store_read_layer(store, 0, buf.as_mut_ptr(), 5), PkStatus::BufferTooSmall);
        pk_store_free(store);
    }
}

#[test]
fn open_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("nope.mps").to_str().unwrap()).unwrap();
    let mut store = ptr::null_mut();
    unsafe {
        assert_eq!(pk_store_open(missing.as_ptr(), &mut store), PkStatus::Io);
        assert!(store.is_null());
        assert_eq!(pk_store_open(ptr::null(), &mut store), PkStatus::NullPointer);
    }

    let (path, _) = write_small_store(dir.path());
    let file = dir.path().join("tiny.mps");
    let mut bytes = std::fs::read(&file).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&file, bytes).unwrap();
    unsafe {
        assert_eq!(pk_store_open(path.as_ptr(), &mut store), PkStatus::Corrupt);
    }
    assert!(!last_error().is_empty());
}

#[test]
fn primitives_match_core() {
    unsafe {
        let (mut v, mut deg) = (0.0, false);
        assert_eq!(pk_normalized_perf(0.9, 0.5, &mut v, &mut deg), PkStatus::Ok);
        assert!((v - 0.8).abs() < 1e-12 && !deg);
        assert_eq!(pk_normalized_perf(0.9, 1.0, &mut v, &mut deg), PkStatus::Ok);
        assert!(deg);

        let curve = [0.1, 0.5, 0.96, 1.0, 0.9];
        let (mut sat, mut max) = (0i64, 0usize);
        assert_eq!(pk_saturation_layer(curve.as_ptr(), curve.len(), 0.95, &mut sat, &mut max), PkStatus::Ok);
        assert_eq!((sat, max), (2, 3));

        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        let mut t = PkTTest::default();
        assert_eq!(pk_welch_t_test(a.as_ptr(), 5, b.as_ptr(), 5, &mut t), PkStatus::Ok);
        assert!((t.t_statistic + 1.0).abs() < 1e-12);
        assert!((t.p_two_sided - 0.3466).abs() < 1e-3);
        assert_eq!(pk_welch_t_test(a.as_ptr(), 1, b.as_ptr(), 5, &mut t), PkStatus::Numeric);

        let p = [0.05, 0.05];
        let (mut z, mut cp) = (0.0, 0.0);
        assert_eq!(pk_stouffer_combine(p.as_ptr(), 2, &mut z, &mut cp), PkStatus::Ok);
        assert!((cp - 0.0100).abs() < 1e-4);

        let mut q = 0.0;
        assert_eq!(pk_normal_cdf_inverse(0.975, &mut q), PkStatus::Ok);
        assert!((q - 1.959964).abs() < 1e-6);
        assert_eq!(pk_normal_cdf_inverse(1.0, &mut q), PkStatus::OutOfRange);
        assert_eq!(pk_normal_cdf_inverse(0.5, ptr::null_mut()), PkStatus::NullPointer);
    }
}

#[test]
fn version_and_header() {
    let v = unsafe { CStr::from_ptr(pk_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/probekit.h")).unwrap();
    for sym in [
        "pk_store_open",
        "pk_store_free",
        "pk_store_shape",
        "pk_store_read_layer",
        "pk_welch_t_test",
        "pk_stouffer_combine",
        "pk_last_error",
        "typedef struct PkStore PkStore",
    ] {
        assert!(header.contains(sym), "{sym} missing from header");
    }
}
