use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use nnose::datastore::{build_datastore, save_datastore, DatastoreConfig, SearchMode};
use nnose::model::{Distribution3, Embedding};
use nnose::synth::{generate, SynthConfig};
use nnose_ffi::*;

fn store_file(dir: &Path) -> (PathBuf, Vec<Vec<f64>>) {
    let cfg = SynthConfig {
        n_train_sentences: 200,
        n_test_sentences: 10,
        n_dev_sentences: 1,
        ..SynthConfig::default()
    };
    let (train, test) = generate(&cfg).unwrap();
    let config = DatastoreConfig {
        ncentroids: 32,
        nprobe: 4,
        ..DatastoreConfig::default()
    };
    let store = build_datastore(&[("synth".into(), train)], config).unwrap();
    let path = dir.join("s.nds");
    save_datastore(&store, &path).unwrap();
    let queries = test
        .iter()
        .flat_map(|s| s.tokens.iter().map(|t| t.embedding.as_slice().to_vec()))
        .collect();
    (path, queries)
}

fn last_error() -> String {
    let n = unsafe { nnose_last_error_message(ptr::null_mut(), 0) };
    let mut buf = vec![0 as c_char; n + 1];
    unsafe { nnose_last_error_message(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn load(path: &Path) -> *mut NnoseStore {
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { nnose_store_load(c.as_ptr(), &mut handle) }, NnoseStatus::Ok);
    assert!(!handle.is_null());
    handle
}

#[test]
fn search_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, queries) = store_file(dir.path());
    let reference = nnose::datastore::load_datastore(&path).unwrap();
    let handle = load(&path);
    assert_eq!(unsafe { nnose_store_dim(handle) }, 16);
    assert_eq!(unsafe { nnose_store_len(handle) }, reference.len());

    let k = 8;
    for q in queries.iter().take(20) {
        for (mode, lib_mode) in [
            (NnoseSearchMode::Exact, SearchMode::Exact),
            (NnoseSearchMode::Clustered, SearchMode::Clustered),
        ] {
            let mut idx = vec![0usize; k];
            let mut dist = vec![0f64; k];
            let mut labels = vec![NnoseLabel::O; k];
            let mut count = 0;
            let status = unsafe {
                nnose_store_search(
                    handle,
                    q.as_ptr(),
                    q.len(),
                    k,
                    mode as u32,
                    idx.as_mut_ptr(),
                    dist.as_mut_ptr(),
                    labels.as_mut_ptr(),
                    &mut count,
                )
            };
            assert_eq!(status, NnoseStatus::Ok);
            let expected = reference.search(&Embedding::new(q.clone()).unwrap(), k, lib_mode).unwrap();
            assert_eq!(count, expected.len());
            for (i, n) in expected.iter().enumerate() {
                assert_eq!(idx[i], n.entry_index);
                assert_eq!(dist[i], n.distance);
                assert_eq!(labels[i] as u8, n.value.ordinal());
            }
        }
    }
    unsafe { nnose_store_free(handle) };
}

#[test]
fn infer_token_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (path, queries) = store_file(dir.path());
    let reference = nnose::datastore::load_datastore(&path).unwrap();
    let handle = load(&path);
    let base = [0.2, 0.5, 0.3];
    for q in queries.iter().take(10) {
        let mut out = [0.0; 3];
        let mut label = NnoseLabel::O;
        let status = unsafe {
            nnose_infer_token(
                handle,
                q.as_ptr(),
                q.len(),
                base.as_ptr(),
                8,
                0.4,
                2.0,
                NnoseSearchMode::Clustered as u32,
                out.as_mut_ptr(),
                &mut label,
            )
        };
        assert_eq!(status, NnoseStatus::Ok);
        let n = reference
            .search(&Embedding::new(q.clone()).unwrap(), 8, SearchMode::Clustered)
            .unwrap();
        let p = nnose::fusion::knn_distribution(&n, 2.0).unwrap();
        let fused = nnose::fusion::interpolate(&p, &Distribution3::from_array(base).unwrap(), 0.4).unwrap();
        assert_eq!(&out, fused.as_array());
        assert_eq!(label as u8, fused.argmax().ordinal());
    }
    unsafe { nnose_store_free(handle) };
}

#[test]
fn error_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut handle = ptr::null_mut();

    let missing = CString::new(dir.path().join("none.nds").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nnose_store_load(missing.as_ptr(), &mut handle) }, NnoseStatus::Io);
    assert!(handle.is_null());
    assert!(last_error().contains("none.nds"));

    let junk_path = dir.path().join("junk.nds");
    std::fs::write(&junk_path, b"ETS1\x01\x00\x00\x00").unwrap();
    let junk = CString::new(junk_path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { nnose_store_load(junk.as_ptr(), &mut handle) }, NnoseStatus::Format);

    assert_eq!(unsafe { nnose_store_load(ptr::null(), &mut handle) }, NnoseStatus::NullPointer);

    let (path, _) = store_file(dir.path());
    let handle = load(&path);
    let short = [0.0; 3];
    let mut idx = [0usize; 1];
    let mut dist = [0f64; 1];
    let mut labels = [NnoseLabel::O; 1];
    let mut count = 7;
    let status = unsafe {
        nnose_store_search(
            handle,
            short.as_ptr(),
            3,
            1,
            0,
            idx.as_mut_ptr(),
            dist.as_mut_ptr(),
            labels.as_mut_ptr(),
            &mut count,
        )
    };
    assert_eq!(status, NnoseStatus::DimensionMismatch);
    assert_eq!(count, 0);
    assert!(last_error().contains("dimension"));

    let q = [0.0; 16];
    let status = unsafe {
        nnose_store_search(
            handle,
            q.as_ptr(),
            16,
            1,
            9,
            idx.as_mut_ptr(),
            dist.as_mut_ptr(),
            labels.as_mut_ptr(),
            &mut count,
        )
    };
    assert_eq!(status, NnoseStatus::InvalidArgument);
    unsafe { nnose_store_free(handle) };
    unsafe { nnose_store_free(ptr::null_mut()) };
}

#[test]
fn fusion_helpers() {
    let labels = [NnoseLabel::B as u32, NnoseLabel::O as u32];
    let dist = [1.0, 2.0];
    let mut out = [0.0; 3];
    let status = unsafe { nnose_knn_distribution(labels.as_ptr(), dist.as_ptr(), 2, 1.0, out.as_mut_ptr()) };
    assert_eq!(status, NnoseStatus::Ok);
    let e1 = (-1.0f64).exp();
    let e2 = (-2.0f64).exp();
    assert!((out[1] - e1 / (e1 + e2)).abs() < 1e-12);
    assert!((out[0] - e2 / (e1 + e2)).abs() < 1e-12);
    assert_eq!(out[2], 0.0);

    let status = unsafe { nnose_knn_distribution(labels.as_ptr(), dist.as_ptr(), 0, 1.0, out.as_mut_ptr()) };
    assert_eq!(status, NnoseStatus::InvalidArgument);
    let bad = [5u32];
    let status = unsafe { nnose_knn_distribution(bad.as_ptr(), dist.as_ptr(), 1, 1.0, out.as_mut_ptr()) };
    assert_eq!(status, NnoseStatus::InvalidArgument);

    // O, B, I order
    let knn = [0.0, 1.0, 0.0];
    let se = [0.5, 0.2, 0.3];
    let status = unsafe { nnose_interpolate(knn.as_ptr(), se.as_ptr(), 0.25, out.as_mut_ptr()) };
    assert_eq!(status, NnoseStatus::Ok);
    assert!((out[0] - 0.375).abs() < 1e-12);
    assert!((out[1] - 0.4).abs() < 1e-12);
    assert!((out[2] - 0.225).abs() < 1e-12);
    let status = unsafe { nnose_interpolate(knn.as_ptr(), se.as_ptr(), 1.5, out.as_mut_ptr()) };
    assert_eq!(status, NnoseStatus::InvalidArgument);

    let v = unsafe { CStr::from_ptr(nnose_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/nnose.h")).unwrap();
    for symbol in [
        "nnose_store_load",
        "nnose_store_free",
        "nnose_store_dim",
        "nnose_store_len",
        "nnose_store_search",
        "nnose_infer_token",
        "nnose_knn_distribution",
        "nnose_interpolate",
        "nnose_last_error_message",
        "NNOSE_STATUS_DIMENSION_MISMATCH",
        "NNOSE_SEARCH_MODE_CLUSTERED",
        "typedef struct NnoseStore NnoseStore;",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

const C_PROGRAM: &str = r#"
#include <stdio.h>
#include "nnose.h"

int main(int argc, char **argv) {
    NnoseStore *store = NULL;
    if (nnose_store_load(argv[1], &store) != NNOSE_STATUS_OK) {
        char msg[256];
        nnose_last_error_message(msg, sizeof msg);
        fprintf(stderr, "%s\n", msg);
        return 2;
    }
    size_t dim = nnose_store_dim(store);
    double q[64] = {0};
    size_t idx[4];
    double dist[4];
    NnoseLabel labels[4];
    size_t count = 0;
    NnoseStatus s = nnose_store_search(store, q, dim, 4, NNOSE_SEARCH_MODE_EXACT, idx, dist, labels, &count);
    if (s != NNOSE_STATUS_OK) return 3;
    for (size_t i = 0; i < count; i++) printf("%zu %.17g %d\n", idx[i], dist[i], (int)labels[i]);
    nnose_store_free(store);
    return 0;
}
"#;

/// Compiles a C client against the generated header and the static library.
#[test]
fn c_client_links_and_agrees() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let target_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target_dir.join("libnnose_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("client.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("client");
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let status = Command::new(cc)
        .arg("-std=c11")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C client failed to build");

    let (path, _) = store_file(dir.path());
    let out = Command::new(&exe).arg(&path).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reference = nnose::datastore::load_datastore(&path).unwrap();
    let expected = reference.exact_search(&Embedding::new(vec![0.0; 16]).unwrap(), 4).unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), expected.len());
    for (line, n) in lines.iter().zip(&expected) {
        let f: Vec<&str> = line.split(' ').collect();
        assert_eq!(f[0].parse::<usize>().unwrap(), n.entry_index);
        assert_eq!(f[1].parse::<f64>().unwrap(), n.distance);
        assert_eq!(f[2].parse::<u8>().unwrap(), n.value.ordinal());
    }
}
