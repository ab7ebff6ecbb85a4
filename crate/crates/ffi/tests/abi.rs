use std::ffi::{CStr, CString};
use std::ptr;

use qtr_ffi::*;

fn last_error() -> String {
    let p = qtr_last_error();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    assert!(!s.is_null());
    let out = CStr::from_ptr(s).to_string_lossy().into_owned();
    qtr_string_free(s);
    out
}

#[test]
fn run_replay_round_trip() {
    unsafe {
        let mut suite = ptr::null_mut();
        assert_eq!(qtr_suite_builtin(&mut suite), QtrStatus::Ok);
        assert_eq!(qtr_suite_question_count(suite), 60);

        let mut cfg = ptr::null_mut();
        assert_eq!(qtr_config_new(&mut cfg), QtrStatus::Ok);
        assert_eq!(qtr_config_set_seed(cfg, 3), QtrStatus::Ok);

        let qid = CString::new("park-1").unwrap();
        let mut res = ptr::null_mut();
        let st = qtr_run_question(suite, qid.as_ptr(), cfg, &mut res);
        if st != QtrStatus::Ok {
            panic!("run failed: {}", last_error());
        }
        assert_eq!(qtr_result_correct(res), 1);
        assert!(!take(qtr_result_answer(res)).is_empty());
        assert!(qtr_result_total_frames(res) > 0);
        assert!((1..=100).contains(&qtr_result_confidence(res)));
        let hash = take(qtr_result_trace_hash(res));
        assert_eq!(hash.len(), 64);
        let json: serde_json::Value = serde_json::from_str(&take(qtr_result_to_json(res))).unwrap();
        assert!(json.is_object());

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("t.ndjson").to_str().unwrap()).unwrap();
        assert_eq!(qtr_result_write_trace(res, path.as_ptr()), QtrStatus::Ok);

        let mut replayed = ptr::null_mut();
        assert_eq!(qtr_replay_trace(path.as_ptr(), &mut replayed), QtrStatus::Ok);
        assert_eq!(take(qtr_result_trace_hash(replayed)), hash);
        assert_eq!(qtr_result_correct(replayed), -1);
        assert_eq!(qtr_result_total_frames(replayed), qtr_result_total_frames(res));

        qtr_result_free(replayed);
        qtr_result_free(res);
        qtr_config_free(cfg);
        qtr_suite_free(suite);
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    unsafe {
        assert_eq!(qtr_suite_builtin(ptr::null_mut()), QtrStatus::NullArgument);
        assert!(last_error().contains("out"));

        let mut suite = ptr::null_mut();
        qtr_suite_builtin(&mut suite);
        let mut cfg = ptr::null_mut();
        qtr_config_new(&mut cfg);
        let mut res = ptr::null_mut();
        let bad = CString::new("no-such-question").unwrap();
        assert_eq!(qtr_run_question(suite, bad.as_ptr(), cfg, &mut res), QtrStatus::NotFound);
        assert!(res.is_null());
        assert!(last_error().contains("no-such-question"));

        let ab = CString::new("no-everything").unwrap();
        assert_eq!(qtr_config_add_ablation(cfg, ab.as_ptr()), QtrStatus::InvalidArgument);
        let ab = CString::new("no-tm").unwrap();
        assert_eq!(qtr_config_add_ablation(cfg, ab.as_ptr()), QtrStatus::Ok);
        assert!(qtr_last_error().is_null(), "success clears the error");

        let mut cfg2 = ptr::null_mut();
        let junk = CString::new("{not json").unwrap();
        assert_eq!(qtr_config_from_json(junk.as_ptr(), &mut cfg2), QtrStatus::Format);

        let missing = CString::new("/nonexistent/trace.ndjson").unwrap();
        let st = qtr_replay_trace(missing.as_ptr(), &mut res);
        assert_eq!(st, QtrStatus::Io);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ndjson");
        std::fs::write(&p, "{\"record\":\"header\"").unwrap();
        let cp = CString::new(p.to_str().unwrap()).unwrap();
        let st = qtr_replay_trace(cp.as_ptr(), &mut res);
        assert!(matches!(st, QtrStatus::Replay | QtrStatus::Format), "{st:?}");

        qtr_config_free(cfg);
        qtr_suite_free(suite);
    }
}

#[test]
fn null_handles_are_harmless() {
    unsafe {
        qtr_suite_free(ptr::null_mut());
        qtr_config_free(ptr::null_mut());
        qtr_result_free(ptr::null_mut());
        qtr_string_free(ptr::null_mut());
        assert_eq!(qtr_suite_question_count(ptr::null()), 0);
        assert!(qtr_result_answer(ptr::null()).is_null());
        assert_eq!(qtr_result_correct(ptr::null()), -1);
        let v = CStr::from_ptr(qtr_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn suite_report_json() {
    unsafe {
        let mut suite = ptr::null_mut();
        qtr_suite_builtin(&mut suite);
        let mut cfg = ptr::null_mut();
        qtr_config_new(&mut cfg);
        let mut out = ptr::null_mut();
        assert_eq!(qtr_run_suite_json(suite, cfg, 1, &mut out), QtrStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["outcomes"].as_array().unwrap().len(), 60);
        assert_eq!(v["failures"], 0);
        qtr_config_free(cfg);
        qtr_suite_free(suite);
    }
}

#[test]
fn header_lists_every_export() {
    let header = include_str!("../include/qtr.h");
    let src = include_str!("../src/lib.rs");
    let mut n = 0;
    for line in src.lines() {
        if let Some(rest) = line.trim().strip_prefix("pub unsafe extern \"C\" fn ").or_else(|| line.trim().strip_prefix("pub extern \"C\" fn ")) {
            let name = rest.split('(').next().unwrap();
            assert!(header.contains(&format!("{name}(")), "{name} missing from qtr.h");
            n += 1;
        }
    }
    assert!(n >= 20);
}
