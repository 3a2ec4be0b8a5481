//! C ABI for the accelerator simulator: opaque handles, integer status codes
//! and a thread-local last-error message. The header is generated into
//! `include/abacus_sim.h` at build time.

use abacus_sim::metrics;
use abacus_sim::sched::PolicyKind;
use abacus_sim::simcore::{self, HardwareParams, Mode, SimulationReport};
use abacus_sim::workload::{self, PresetOptions, WorkloadMix};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;

/// Status codes returned by fallible calls.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbacusStatus {
    Ok = 0,
    InvalidArgument = 1,
    ParseError = 2,
    RunError = 3,
    IoError = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap());
}

/// Message of the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn abacus_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

unsafe fn cstr<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, AbacusStatus> {
    if ptr.is_null() {
        set_error(format!("{what} is null"));
        return Err(AbacusStatus::InvalidArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        AbacusStatus::InvalidArgument
    })
}

/// Opaque hardware/model parameter set.
pub struct AbacusParams {
    inner: HardwareParams,
}

/// Creates the default parameter set. Free with `abacus_params_free`.
#[no_mangle]
pub extern "C" fn abacus_params_new() -> *mut AbacusParams {
    Box::into_raw(Box::new(AbacusParams {
        inner: HardwareParams::default(),
    }))
}

/// Applies one `key=value`-style override (same keys as the CLI `--set`).
///
/// # Safety
/// `params` must come from `abacus_params_new` and not be freed; `key` and
/// `value` must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn abacus_params_set(
    params: *mut AbacusParams,
    key: *const c_char,
    value: *const c_char,
) -> AbacusStatus {
    let Some(params) = params.as_mut() else {
        set_error("params is null");
        return AbacusStatus::InvalidArgument;
    };
    let (key, value) = match (cstr(key, "key"), cstr(value, "value")) {
        (Ok(k), Ok(v)) => (k, v),
        _ => return AbacusStatus::InvalidArgument,
    };
    match params.inner.set(key, value) {
        Ok(()) => AbacusStatus::Ok,
        Err(e) => {
            set_error(e);
            AbacusStatus::InvalidArgument
        }
    }
}

/// # Safety
/// `params` must come from `abacus_params_new`; it is freed exactly once.
#[no_mangle]
pub unsafe extern "C" fn abacus_params_free(params: *mut AbacusParams) {
    if !params.is_null() {
        drop(Box::from_raw(params));
    }
}

/// Opaque workload handle.
pub struct AbacusWorkload {
    inner: WorkloadMix,
}

fn workload_handle(mix: Result<WorkloadMix, workload::WorkloadError>) -> *mut AbacusWorkload {
    match mix {
        Ok(inner) => Box::into_raw(Box::new(AbacusWorkload { inner })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// Loads a named preset workload (e.g. "atax", "syrk", "demo-intra").
/// Returns null on error; see `abacus_last_error`.
///
/// # Safety
/// `name` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn abacus_workload_preset(name: *const c_char) -> *mut AbacusWorkload {
    let Ok(name) = cstr(name, "preset name") else {
        return std::ptr::null_mut();
    };
    workload_handle(workload::by_name(name, &PresetOptions::default()))
}

/// Builds heterogeneous mix 1..=14 with the given instances per kernel.
#[no_mangle]
pub extern "C" fn abacus_workload_mix(mix_id: u32, instances_per_kernel: u32) -> *mut AbacusWorkload {
    if instances_per_kernel == 0 {
        set_error("instances_per_kernel must be >= 1");
        return std::ptr::null_mut();
    }
    workload_handle(workload::build_mix(mix_id, instances_per_kernel))
}

/// Parses a workload document (the same grammar as `--spec` files).
///
/// # Safety
/// `text` must be a valid NUL-terminated string; `params` as for
/// `abacus_params_set` (null means defaults).
#[no_mangle]
pub unsafe extern "C" fn abacus_workload_parse(
    text: *const c_char,
    params: *const AbacusParams,
) -> *mut AbacusWorkload {
    let Ok(text) = cstr(text, "workload text") else {
        return std::ptr::null_mut();
    };
    let limits = params
        .as_ref()
        .map(|p| p.inner.geometry.validation_limits())
        .unwrap_or_default();
    workload_handle(workload::parse_workload(text, &limits))
}

/// # Safety
/// `workload` must come from one of the constructors; freed exactly once.
#[no_mangle]
pub unsafe extern "C" fn abacus_workload_free(workload: *mut AbacusWorkload) {
    if !workload.is_null() {
        drop(Box::from_raw(workload));
    }
}

/// Opaque finished-run handle.
pub struct AbacusReport {
    report: SimulationReport,
    params: HardwareParams,
}

/// Runs one workload under a policy ("interst" | "interdy" | "intraio" |
/// "intrao3" | "simd") and datapath mode ("flashabacus" | "baseline").
/// Returns null on error; see `abacus_last_error`.
///
/// # Safety
/// `workload` from a constructor; `policy`/`mode` valid strings; `params`
/// from `abacus_params_new` or null for defaults.
#[no_mangle]
pub unsafe extern "C" fn abacus_run(
    workload: *const AbacusWorkload,
    policy: *const c_char,
    mode: *const c_char,
    params: *const AbacusParams,
) -> *mut AbacusReport {
    let Some(workload) = workload.as_ref() else {
        set_error("workload is null");
        return std::ptr::null_mut();
    };
    let (Ok(policy_s), Ok(mode_s)) = (cstr(policy, "policy"), cstr(mode, "mode")) else {
        return std::ptr::null_mut();
    };
    let Some(policy) = PolicyKind::parse(policy_s) else {
        set_error(format!("unknown policy `{policy_s}`"));
        return std::ptr::null_mut();
    };
    let Some(mode) = Mode::parse(mode_s) else {
        set_error(format!("unknown mode `{mode_s}`"));
        return std::ptr::null_mut();
    };
    let defaults;
    let hw = match params.as_ref() {
        Some(p) => &p.inner,
        None => {
            defaults = HardwareParams::default();
            &defaults
        }
    };
    match simcore::run(&workload.inner, policy, hw, mode) {
        Ok(report) => Box::into_raw(Box::new(AbacusReport {
            report,
            params: hw.clone(),
        })),
        Err(e) => {
            set_error(e);
            std::ptr::null_mut()
        }
    }
}

/// # Safety
/// `report` must come from `abacus_run`; freed exactly once.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_free(report: *mut AbacusReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Simulated time from first offload arrival to last kernel completion, in
/// seconds. NaN for a null report.
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_makespan_secs(report: *const AbacusReport) -> f64 {
    report
        .as_ref()
        .map_or(f64::NAN, |r| abacus_sim::units::ps_to_secs(r.report.makespan()))
}

/// Processed input bytes per second of makespan.
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_throughput_bytes_per_sec(report: *const AbacusReport) -> f64 {
    report
        .as_ref()
        .map_or(f64::NAN, |r| metrics::throughput(&r.report).unwrap_or(0.0))
}

/// Total energy of the run in joules (data movement + computation + storage
/// access).
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_energy_total_joules(report: *const AbacusReport) -> f64 {
    report
        .as_ref()
        .map_or(f64::NAN, |r| metrics::energy(&r.report, &r.params).total_j())
}

/// Mean worker utilization over the makespan, in [0, 1].
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_mean_worker_utilization(report: *const AbacusReport) -> f64 {
    report
        .as_ref()
        .map_or(f64::NAN, |r| metrics::utilization(&r.report).mean)
}

/// Number of kernel instances in the finished run.
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_kernel_count(report: *const AbacusReport) -> usize {
    report.as_ref().map_or(0, |r| r.report.kernels.len())
}

/// Latency of one kernel instance in seconds, or NaN if out of range.
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_kernel_latency_secs(
    report: *const AbacusReport,
    index: usize,
) -> f64 {
    report
        .as_ref()
        .and_then(|r| r.report.kernels.get(index))
        .map_or(f64::NAN, |k| abacus_sim::units::ps_to_secs(k.latency()))
}

/// Serializes the full report document (TOML). Free with
/// `abacus_string_free`.
///
/// # Safety
/// `report` must come from `abacus_run` and not be freed.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_toml(report: *const AbacusReport) -> *mut c_char {
    let Some(r) = report.as_ref() else {
        set_error("report is null");
        return std::ptr::null_mut();
    };
    let doc = metrics::build_report_doc(&r.report, &r.params);
    CString::new(doc.to_toml_string().replace('\0', " "))
        .map(CString::into_raw)
        .unwrap_or(std::ptr::null_mut())
}

/// Writes `<base>.report`, `<base>.events.csv` and `<base>.dispatch.csv`
/// into `dir`.
///
/// # Safety
/// `report` from `abacus_run`; `dir` and `base` valid strings.
#[no_mangle]
pub unsafe extern "C" fn abacus_report_write_artifacts(
    report: *const AbacusReport,
    dir: *const c_char,
    base: *const c_char,
) -> AbacusStatus {
    let Some(r) = report.as_ref() else {
        set_error("report is null");
        return AbacusStatus::InvalidArgument;
    };
    let (Ok(dir), Ok(base)) = (cstr(dir, "dir"), cstr(base, "base")) else {
        return AbacusStatus::InvalidArgument;
    };
    let dir = Path::new(dir);
    if let Err(e) = std::fs::create_dir_all(dir) {
        set_error(e);
        return AbacusStatus::IoError;
    }
    let doc = metrics::build_report_doc(&r.report, &r.params);
    let writes = [
        (format!("{base}.report"), doc.to_toml_string()),
        (format!("{base}.events.csv"), abacus_sim::trace::events_csv(&r.report)),
        (format!("{base}.dispatch.csv"), abacus_sim::trace::dispatch_csv(&r.report)),
    ];
    for (name, text) in writes {
        if let Err(e) = std::fs::write(dir.join(&name), text) {
            set_error(e);
            return AbacusStatus::IoError;
        }
    }
    AbacusStatus::Ok
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must come from an `abacus_*` call that documents this deallocator.
#[no_mangle]
pub unsafe extern "C" fn abacus_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
