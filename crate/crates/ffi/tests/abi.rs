use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use sl2lab_ffi::*;

fn last_error() -> String {
    let p = sl2_last_error();
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned();
    unsafe { sl2_string_free(p) };
    s
}

#[test]
fn group_orders() {
    let mut o = 0u64;
    for (q, want) in [(1u64, 1u64), (2, 6), (5, 120), (8, 384), (30, 17280)] {
        assert_eq!(unsafe { sl2_group_order(q, &mut o) }, Sl2Status::Ok);
        assert_eq!(o, want);
    }
    assert_eq!(unsafe { sl2_group_order(0, &mut o) }, Sl2Status::InvalidInput);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { sl2_group_order(5, ptr::null_mut()) }, Sl2Status::NullPointer);
    assert!(last_error().contains("null"));
}

#[test]
fn generators_roundtrip_and_lambda2() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sl2_generators_zariski_dense(&mut h) }, Sl2Status::Ok);
    let mut len = 0usize;
    assert_eq!(unsafe { sl2_generators_len(h, &mut len) }, Sl2Status::Ok);
    assert_eq!(len, 4);
    let (mut l2, mut n) = (0.0f64, 0usize);
    assert_eq!(unsafe { sl2_lambda2(h, 3, &mut l2, &mut n) }, Sl2Status::Ok);
    assert_eq!(n, 192);
    assert!((l2 - 0.8536).abs() < 1e-3, "{l2}");
    assert_eq!(unsafe { sl2_lambda2(h, 1, &mut l2, ptr::null_mut()) }, Sl2Status::Precondition);
    unsafe { sl2_generators_free(h) };
    unsafe { sl2_generators_free(ptr::null_mut()) };
}

#[test]
fn json_generators() {
    let good = CString::new(r#"[[[["1","1"],["0","1"]],[["1","0"],["0","1"]]],[[["1","-1"],["0","1"]],[["1","0"],["0","1"]]]]"#).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { sl2_generators_from_json(good.as_ptr(), &mut h) }, Sl2Status::Ok);
    unsafe { sl2_generators_free(h) };
    let asym = CString::new(r#"[[[["1","1"],["0","1"]],[["1","0"],["0","1"]]]]"#).unwrap();
    assert_eq!(unsafe { sl2_generators_from_json(asym.as_ptr(), &mut h) }, Sl2Status::Precondition);
    assert!(last_error().contains("symmetric"));
    let junk = CString::new("not json").unwrap();
    assert_eq!(unsafe { sl2_generators_from_json(junk.as_ptr(), &mut h) }, Sl2Status::InvalidInput);
    assert_eq!(unsafe { sl2_generators_from_json(ptr::null(), &mut h) }, Sl2Status::NullPointer);
}

#[test]
fn sweep_and_glue() {
    let (mut pairs, mut bad) = (0u64, 1u64);
    assert_eq!(unsafe { sl2_commutator_sweep(2, 3, &mut pairs, &mut bad) }, Sl2Status::Ok);
    assert_eq!((pairs, bad), (4096, 0));
    let mut js = ptr::null_mut();
    assert_eq!(unsafe { sl2_glue_diagonal_json(5, false, 0.3, &mut js) }, Sl2Status::Ok);
    let v: serde_json::Value = serde_json::from_str(unsafe { CStr::from_ptr(js) }.to_str().unwrap()).unwrap();
    unsafe { sl2_string_free(js) };
    assert_eq!(v["expansion"], false);
    assert_eq!(v["all_replayed"], true);
}

#[test]
fn header_is_current() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sl2lab.h")).unwrap();
    for f in ["sl2_last_error", "sl2_string_free", "sl2_generators_free", "sl2_lambda2", "typedef struct Sl2Generators Sl2Generators"] {
        assert!(h.contains(f), "{f}");
    }
}

// links a C program against the static library through the generated header
#[test]
fn c_program_links() {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    let profile_dir = deps.parent().unwrap();
    // cargo test builds only the rlib; build the archive into the same target dir
    let st = Command::new(env!("CARGO"))
        .args(["build", "--quiet", "-p", "sl2lab-ffi", "--lib", "--target-dir"])
        .arg(profile_dir.parent().unwrap())
        .current_dir(env!("CARGO_MANIFEST_DIR"))
        .status()
        .expect("cargo runs");
    assert!(st.success());
    let lib = profile_dir.parent().unwrap().join("debug/libsl2lab_ffi.a");
    assert!(lib.exists(), "static library missing at {}", lib.display());
    let dir = tempfile_dir();
    let src = dir.join("smoke.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "sl2lab.h"
int main(void) {
    uint64_t o = 0;
    if (sl2_group_order(7, &o) != SL2_STATUS_OK || o != 336) return 1;
    if (sl2_group_order(0, &o) != SL2_STATUS_INVALID_INPUT) return 2;
    char *e = sl2_last_error();
    if (!e) return 3;
    sl2_string_free(e);
    Sl2Generators *g = NULL;
    if (sl2_generators_zariski_dense(&g) != SL2_STATUS_OK) return 4;
    double l2 = 0; size_t n = 0;
    if (sl2_lambda2(g, 3, &l2, &n) != SL2_STATUS_OK || n != 192) return 5;
    sl2_generators_free(g);
    printf("%.4f\n", l2);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.join("smoke");
    let st = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("cc runs");
    assert!(st.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "0.8536");
}

fn tempfile_dir() -> PathBuf {
    let d = std::env::temp_dir().join(format!("sl2lab-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
