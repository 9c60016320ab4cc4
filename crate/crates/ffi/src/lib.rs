//! C ABI for the simulator.
//!
//! Objects are opaque handles created by `ts_*_new` style functions and
//! released with the matching `ts_*_free`. Every fallible call returns a
//! [`TsStatus`]; on failure `ts_last_error` describes the problem. Strings
//! returned through out-parameters are owned by the caller and must be
//! released with [`ts_string_free`].
//!
//! Handles are not thread-safe; use each from one thread at a time.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tracesim::config::{parse_config, SystemConfig};
use tracesim::metrics::SimReport;
use tracesim::modules::ModuleRegistry;
use tracesim::sim::{SimError, Simulation};
use tracesim::trace::synthetic::{Pattern, SyntheticSpec, SyntheticTrace};
use tracesim::trace::{InstructionSource, ReplayingTrace, TraceError, TraceWriter};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The machine description is malformed or inconsistent.
    ConfigError = 3,
    /// A trace could not be read or generated.
    TraceError = 4,
    /// Arguments do not fit together (for example, trace count vs core count).
    UsageError = 5,
    /// The simulation failed while running.
    RuntimeError = 6,
    /// The requested statistic does not exist.
    NotFound = 7,
    /// An internal error; the handle involved should be freed.
    Panic = 8,
}

/// Machine description.
pub struct TsConfig {
    inner: SystemConfig,
}

/// A simulation in progress.
pub struct TsSimulation {
    inner: Simulation,
}

/// Statistics of a finished or paused simulation.
pub struct TsReport {
    inner: SimReport,
    flat: BTreeMap<String, f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: TsStatus, msg: impl Into<String>) -> TsStatus {
    set_error(msg);
    status
}

fn status_of(err: &SimError) -> TsStatus {
    match err {
        SimError::Config(_) => TsStatus::ConfigError,
        SimError::Usage(_) => TsStatus::UsageError,
        SimError::Trace(_) => TsStatus::TraceError,
        _ => TsStatus::RuntimeError,
    }
}

fn sim_error(err: SimError) -> TsStatus {
    fail(status_of(&err), err.to_string())
}

/// Runs `f`, turning panics into [`TsStatus::Panic`].
fn guard(f: impl FnOnce() -> TsStatus) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == TsStatus::Ok {
                set_error("");
            }
            s
        }
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            fail(TsStatus::Panic, format!("internal error: {msg}"))
        }
    }
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, TsStatus> {
    if s.is_null() {
        return Err(fail(TsStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(TsStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn to_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

macro_rules! try_ts {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

macro_rules! non_null {
    ($p:expr, $name:literal) => {
        if $p.is_null() {
            return fail(TsStatus::NullArgument, concat!($name, " is null"));
        }
    };
}

/// Message describing the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call into this library.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must be null or a string returned by this library that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Default machine with `num_cores` cores.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ts_config_default(num_cores: u32, out: *mut *mut TsConfig) -> TsStatus {
    non_null!(out, "out");
    guard(|| {
        let text = format!("{{\"num_cores\": {num_cores}}}");
        match parse_config(&text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(TsConfig { inner: cfg }));
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::ConfigError, e.to_string()),
        }
    })
}

/// Parses a JSON machine description; omitted fields take their defaults.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_config_from_json(json: *const c_char, out: *mut *mut TsConfig) -> TsStatus {
    non_null!(out, "out");
    guard(|| {
        let text = try_ts!(str_arg(json, "json"));
        match parse_config(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(TsConfig { inner: cfg }));
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::ConfigError, e.to_string()),
        }
    })
}

/// Fully expanded JSON form of a configuration. Free the result with [`ts_string_free`].
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_config_to_json(config: *const TsConfig, out: *mut *mut c_char) -> TsStatus {
    non_null!(config, "config");
    non_null!(out, "out");
    guard(|| {
        *out = to_c_string((*config).inner.to_json());
        TsStatus::Ok
    })
}

/// Number of cores in a configuration, or 0 for a null handle.
///
/// # Safety
/// `config` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ts_config_num_cores(config: *const TsConfig) -> u32 {
    if config.is_null() {
        return 0;
    }
    (*config).inner.num_cores as u32
}

/// # Safety
/// `config` must be null or a handle that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ts_config_free(config: *mut TsConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Builds a simulation of `config` with one trace file per core, using the
/// built-in modules. Traces shorter than the run are replayed from the start.
/// The configuration is copied; it may be freed afterwards.
///
/// # Safety
/// `config` must be a live handle, `trace_paths` must point to `num_traces`
/// NUL-terminated strings and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_simulation_new(
    config: *const TsConfig,
    trace_paths: *const *const c_char,
    num_traces: usize,
    warmup: u64,
    simulate: u64,
    out: *mut *mut TsSimulation,
) -> TsStatus {
    non_null!(config, "config");
    non_null!(out, "out");
    if num_traces > 0 {
        non_null!(trace_paths, "trace_paths");
    }
    guard(|| {
        let cfg = (*config).inner.clone();
        let mut sources: Vec<Box<dyn InstructionSource>> = Vec::with_capacity(num_traces);
        for i in 0..num_traces {
            let path = try_ts!(str_arg(*trace_paths.add(i), "trace path"));
            match ReplayingTrace::open(path) {
                Ok(t) => sources.push(Box::new(t)),
                Err(e) => return fail(TsStatus::TraceError, e.to_string()),
            }
        }
        let registry = ModuleRegistry::with_reference_modules();
        match Simulation::new(cfg, &registry, sources, warmup, simulate) {
            Ok(sim) => {
                *out = Box::into_raw(Box::new(TsSimulation { inner: sim }));
                TsStatus::Ok
            }
            Err(e) => sim_error(e),
        }
    })
}

/// Advances to the next clock edge. `running` is set to false once the run has finished.
///
/// # Safety
/// `sim` must be a live handle and `running` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_simulation_step(sim: *mut TsSimulation, running: *mut bool) -> TsStatus {
    non_null!(sim, "sim");
    non_null!(running, "running");
    guard(|| match (*sim).inner.step() {
        Ok(r) => {
            *running = r;
            TsStatus::Ok
        }
        Err(e) => sim_error(e),
    })
}

/// Runs to completion and returns the final report.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_simulation_run(sim: *mut TsSimulation, out: *mut *mut TsReport) -> TsStatus {
    non_null!(sim, "sim");
    non_null!(out, "out");
    guard(|| match (*sim).inner.run() {
        Ok(report) => {
            *out = new_report(report);
            TsStatus::Ok
        }
        Err(e) => sim_error(e),
    })
}

/// Snapshot of the counters as they stand.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_simulation_report(sim: *const TsSimulation, out: *mut *mut TsReport) -> TsStatus {
    non_null!(sim, "sim");
    non_null!(out, "out");
    guard(|| {
        *out = new_report((*sim).inner.report());
        TsStatus::Ok
    })
}

/// # Safety
/// `sim` must be null or a handle that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ts_simulation_free(sim: *mut TsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

fn new_report(report: SimReport) -> *mut TsReport {
    let flat = report
        .to_flat()
        .into_iter()
        .filter_map(|(k, v)| {
            let x = v.as_f64().or_else(|| v.as_bool().map(|b| b as u8 as f64))?;
            Some((k, x))
        })
        .collect();
    Box::into_raw(Box::new(TsReport { inner: report, flat }))
}

/// Report as a flat JSON object. Free the result with [`ts_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_report_to_json(report: *const TsReport, out: *mut *mut c_char) -> TsStatus {
    non_null!(report, "report");
    non_null!(out, "out");
    guard(|| {
        *out = to_c_string((*report).inner.to_json());
        TsStatus::Ok
    })
}

/// Human-readable summary. Free the result with [`ts_string_free`].
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_report_to_text(report: *const TsReport, out: *mut *mut c_char) -> TsStatus {
    non_null!(report, "report");
    non_null!(out, "out");
    guard(|| {
        *out = to_c_string((*report).inner.to_text());
        TsStatus::Ok
    })
}

/// Looks up one statistic by its flat key, such as `core0.ipc`.
/// Boolean entries read as 0 or 1.
///
/// # Safety
/// `report` must be a live handle, `key` a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_report_get(report: *const TsReport, key: *const c_char, out: *mut f64) -> TsStatus {
    non_null!(report, "report");
    non_null!(out, "out");
    guard(|| {
        let key = try_ts!(str_arg(key, "key"));
        match (*report).flat.get(key) {
            Some(&v) => {
                *out = v;
                TsStatus::Ok
            }
            None => fail(TsStatus::NotFound, format!("no statistic named '{key}'")),
        }
    })
}

/// # Safety
/// `report` must be null or a handle that was not freed yet.
#[no_mangle]
pub unsafe extern "C" fn ts_report_free(report: *mut TsReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Writes a synthetic trace. `pattern` is one of `streaming-load`,
/// `strided-load`, `random-load`, `loop-branch`, `pointer-chase` or
/// `pure-arithmetic`; other parameters take their defaults. A `.gz` or `.xz`
/// extension on `path` selects compression.
///
/// # Safety
/// `pattern` and `path` must be NUL-terminated strings; `records` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_tracegen(
    pattern: *const c_char,
    length: u64,
    seed: u64,
    path: *const c_char,
    records: *mut u64,
) -> TsStatus {
    guard(|| {
        let pattern = try_ts!(str_arg(pattern, "pattern"));
        let path = try_ts!(str_arg(path, "path"));
        let pattern: Pattern = match pattern.parse() {
            Ok(p) => p,
            Err(e) => return fail(TsStatus::UsageError, TraceError::to_string(&e)),
        };
        let written = (|| -> Result<u64, TraceError> {
            let mut w = TraceWriter::create(path)?;
            for rec in SyntheticTrace::new(SyntheticSpec::new(pattern, length, seed))? {
                w.write(&rec)?;
            }
            w.finish()
        })();
        match written {
            Ok(n) => {
                if !records.is_null() {
                    *records = n;
                }
                TsStatus::Ok
            }
            Err(TraceError::Spec(m)) => fail(TsStatus::UsageError, m),
            Err(e) => fail(TsStatus::TraceError, e.to_string()),
        }
    })
}
