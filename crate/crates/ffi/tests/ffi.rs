use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tracesim_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(ts_last_error()) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    ts_string_free(p);
    s
}

fn tracegen(dir: &Path, name: &str, pattern: &str, length: u64) -> CString {
    let path = dir.join(name);
    let c_path = cstr(path.to_str().unwrap());
    let mut written = 0;
    let status = unsafe { ts_tracegen(cstr(pattern).as_ptr(), length, 3, c_path.as_ptr(), &mut written) };
    assert_eq!(status, TsStatus::Ok, "{}", last_error());
    assert_eq!(written, length);
    c_path
}

#[test]
fn config_round_trips_through_json() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ts_config_default(2, &mut cfg), TsStatus::Ok);
        assert_eq!(ts_config_num_cores(cfg), 2);
        let mut json = ptr::null_mut();
        assert_eq!(ts_config_to_json(cfg, &mut json), TsStatus::Ok);
        let json = cstr(&take_string(json));
        ts_config_free(cfg);

        let mut again = ptr::null_mut();
        assert_eq!(ts_config_from_json(json.as_ptr(), &mut again), TsStatus::Ok);
        assert_eq!(ts_config_num_cores(again), 2);
        ts_config_free(again);
    }
}

#[test]
fn bad_config_sets_error_message() {
    unsafe {
        let mut cfg = ptr::null_mut();
        let status = ts_config_from_json(cstr(r#"{"num_cores": 1, "cores": [{"rob_size": 0}]}"#).as_ptr(), &mut cfg);
        assert_eq!(status, TsStatus::ConfigError);
        assert!(cfg.is_null());
        assert!(last_error().contains("rob_size"), "{}", last_error());

        assert_eq!(ts_config_from_json(cstr("{ nope").as_ptr(), &mut cfg), TsStatus::ConfigError);
        assert_eq!(ts_config_default(0, &mut cfg), TsStatus::ConfigError);

        // a successful call clears the message
        assert_eq!(ts_config_default(1, &mut cfg), TsStatus::Ok);
        assert_eq!(last_error(), "");
        ts_config_free(cfg);
    }
}

#[test]
fn null_and_invalid_arguments_are_rejected() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ts_config_default(1, ptr::null_mut()), TsStatus::NullArgument);
        assert_eq!(ts_config_from_json(ptr::null(), &mut cfg), TsStatus::NullArgument);
        assert!(last_error().contains("json"));
        let bad = [0xffu8, 0xfe, 0];
        assert_eq!(ts_config_from_json(bad.as_ptr().cast(), &mut cfg), TsStatus::InvalidUtf8);

        let mut running = false;
        assert_eq!(ts_simulation_step(ptr::null_mut(), &mut running), TsStatus::NullArgument);
        let mut value = 0.0;
        assert_eq!(ts_report_get(ptr::null(), cstr("x").as_ptr(), &mut value), TsStatus::NullArgument);

        // freeing null is a no-op
        ts_config_free(ptr::null_mut());
        ts_simulation_free(ptr::null_mut());
        ts_report_free(ptr::null_mut());
        ts_string_free(ptr::null_mut());
        assert_eq!(ts_config_num_cores(ptr::null()), 0);
    }
}

#[test]
fn tracegen_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = cstr(dir.path().join("x.trace").to_str().unwrap());
    unsafe {
        assert_eq!(ts_tracegen(cstr("zigzag").as_ptr(), 10, 0, out.as_ptr(), ptr::null_mut()), TsStatus::UsageError);
        assert!(last_error().contains("zigzag"));
        assert_eq!(ts_tracegen(cstr("loop-branch").as_ptr(), 0, 0, out.as_ptr(), ptr::null_mut()), TsStatus::UsageError);
        let unwritable = cstr(dir.path().join("no/such/dir/x.trace").to_str().unwrap());
        assert_eq!(
            ts_tracegen(cstr("loop-branch").as_ptr(), 10, 0, unwritable.as_ptr(), ptr::null_mut()),
            TsStatus::TraceError
        );
    }
}

#[test]
fn simulation_runs_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let a = tracegen(dir.path(), "a.trace.gz", "random-load", 5_000);
    let b = tracegen(dir.path(), "b.trace", "loop-branch", 5_000);
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ts_config_default(2, &mut cfg), TsStatus::Ok);
        let paths = [a.as_ptr(), b.as_ptr()];
        let mut sim = ptr::null_mut();
        assert_eq!(ts_simulation_new(cfg, paths.as_ptr(), 2, 1_000, 4_000, &mut sim), TsStatus::Ok, "{}", last_error());
        ts_config_free(cfg);

        let mut running = true;
        for _ in 0..100 {
            assert_eq!(ts_simulation_step(sim, &mut running), TsStatus::Ok);
        }
        assert!(running);

        let mut report = ptr::null_mut();
        assert_eq!(ts_simulation_run(sim, &mut report), TsStatus::Ok, "{}", last_error());
        assert_eq!(ts_simulation_step(sim, &mut running), TsStatus::Ok);
        assert!(!running);

        let mut value = 0.0;
        for core in 0..2 {
            let key = cstr(&format!("core{core}.instructions"));
            assert_eq!(ts_report_get(report, key.as_ptr(), &mut value), TsStatus::Ok);
            assert_eq!(value, 4_000.0);
            let key = cstr(&format!("core{core}.ipc"));
            assert_eq!(ts_report_get(report, key.as_ptr(), &mut value), TsStatus::Ok);
            assert!(value > 0.0);
        }
        assert_eq!(ts_report_get(report, cstr("core7.ipc").as_ptr(), &mut value), TsStatus::NotFound);

        let mut json = ptr::null_mut();
        assert_eq!(ts_report_to_json(report, &mut json), TsStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
        assert_eq!(v["core1.instructions"], 4_000);

        let mut text = ptr::null_mut();
        assert_eq!(ts_report_to_text(report, &mut text), TsStatus::Ok);
        assert!(take_string(text).contains("core 1"));

        let mut snapshot = ptr::null_mut();
        assert_eq!(ts_simulation_report(sim, &mut snapshot), TsStatus::Ok);
        ts_report_free(snapshot);
        ts_report_free(report);
        ts_simulation_free(sim);
    }
}

#[test]
fn simulation_setup_errors_map_to_codes() {
    let dir = tempfile::tempdir().unwrap();
    let a = tracegen(dir.path(), "a.trace", "pure-arithmetic", 100);
    let missing = cstr(dir.path().join("missing.trace").to_str().unwrap());
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(ts_config_default(2, &mut cfg), TsStatus::Ok);
        let mut sim = ptr::null_mut();
        let one = [a.as_ptr()];
        assert_eq!(ts_simulation_new(cfg, one.as_ptr(), 1, 0, 10, &mut sim), TsStatus::UsageError);
        assert!(last_error().contains("2 cores but 1 traces"), "{}", last_error());
        let two = [a.as_ptr(), missing.as_ptr()];
        assert_eq!(ts_simulation_new(cfg, two.as_ptr(), 2, 0, 10, &mut sim), TsStatus::TraceError);
        assert!(sim.is_null());
        ts_config_free(cfg);
    }
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(ts_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/tracesim.h")
}

#[test]
fn header_declares_the_api() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "typedef struct TsConfig TsConfig;",
        "typedef struct TsSimulation TsSimulation;",
        "typedef struct TsReport TsReport;",
        "TS_STATUS_OK = 0",
        "TS_STATUS_PANIC = 8",
        "ts_config_from_json(",
        "ts_simulation_new(",
        "ts_simulation_run(",
        "ts_report_get(",
        "ts_tracegen(",
        "ts_last_error(void)",
        "ts_string_free(",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

/// Compiles a small C program against the header and the static library when
/// a C compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let target_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = target_dir.join("libtracesim_ffi.a");
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    if !lib.exists() || Command::new(&cc).arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or {} missing", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "tracesim.h"

int main(int argc, char **argv) {
    const char *trace = argv[1];
    uint64_t n = 0;
    if (ts_tracegen("streaming-load", 2000, 1, trace, &n) != TS_STATUS_OK) return 10;
    TsConfig *cfg = NULL;
    if (ts_config_default(1, &cfg) != TS_STATUS_OK) return 11;
    TsSimulation *sim = NULL;
    if (ts_simulation_new(cfg, &trace, 1, 500, 1500, &sim) != TS_STATUS_OK) return 12;
    ts_config_free(cfg);
    TsReport *report = NULL;
    if (ts_simulation_run(sim, &report) != TS_STATUS_OK) return 13;
    double instr = 0;
    if (ts_report_get(report, "core0.instructions", &instr) != TS_STATUS_OK) return 14;
    if (ts_report_get(report, "bogus", &instr) != TS_STATUS_NOT_FOUND) return 15;
    printf("%s\n", ts_last_error());
    ts_report_free(report);
    ts_simulation_free(sim);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new(&cc)
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&lib)
        .args(["-llzma", "-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).arg(dir.path().join("t.trace")).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("bogus"));
}
