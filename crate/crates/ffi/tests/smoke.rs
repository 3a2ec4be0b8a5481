//! Exercises the C surface from Rust: handle lifecycle, error reporting and
//! metric getters.

use abacus_sim_ffi::*;
use std::ffi::{CStr, CString};

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(abacus_last_error()).to_string_lossy().into_owned() }
}

#[test]
fn end_to_end_run_through_the_c_surface() {
    unsafe {
        let params = abacus_params_new();
        assert_eq!(
            abacus_params_set(params, c("hw.lwp_count").as_ptr(), c("6").as_ptr()),
            AbacusStatus::Ok
        );
        assert_eq!(
            abacus_params_set(params, c("sched.instant_arrival").as_ptr(), c("true").as_ptr()),
            AbacusStatus::Ok
        );
        let workload = abacus_workload_preset(c("demo-intra").as_ptr());
        assert!(!workload.is_null(), "{}", last_error());

        let report = abacus_run(
            workload,
            c("intrao3").as_ptr(),
            c("flashabacus").as_ptr(),
            params,
        );
        assert!(!report.is_null(), "{}", last_error());

        // The canonical intra scenario finishes in 5 unit microseconds.
        let makespan = abacus_report_makespan_secs(report);
        assert!((makespan - 5e-6).abs() < 1e-12, "{makespan}");
        assert_eq!(abacus_report_kernel_count(report), 4);
        let k0 = abacus_report_kernel_latency_secs(report, 0);
        assert!((k0 - 2e-6).abs() < 1e-12);
        assert!(abacus_report_mean_worker_utilization(report) > 0.0);
        assert!(abacus_report_energy_total_joules(report) > 0.0);

        let toml = abacus_report_toml(report);
        assert!(!toml.is_null());
        let text = CStr::from_ptr(toml).to_string_lossy().into_owned();
        assert!(text.contains("policy = \"intrao3\""));
        abacus_string_free(toml);

        let dir = tempfile::tempdir().unwrap();
        let dir_c = c(dir.path().to_str().unwrap());
        assert_eq!(
            abacus_report_write_artifacts(report, dir_c.as_ptr(), c("demo").as_ptr()),
            AbacusStatus::Ok
        );
        assert!(dir.path().join("demo.report").exists());
        assert!(dir.path().join("demo.events.csv").exists());
        assert!(dir.path().join("demo.dispatch.csv").exists());

        abacus_report_free(report);
        abacus_workload_free(workload);
        abacus_params_free(params);
    }
}

#[test]
fn errors_surface_through_status_and_message() {
    unsafe {
        let missing = abacus_workload_preset(c("no-such-preset").as_ptr());
        assert!(missing.is_null());
        assert!(last_error().contains("no-such-preset"), "{}", last_error());

        let bad_mix = abacus_workload_mix(15, 4);
        assert!(bad_mix.is_null());
        assert!(last_error().contains("unknown mix"), "{}", last_error());

        let params = abacus_params_new();
        assert_eq!(
            abacus_params_set(params, c("hw.bogus").as_ptr(), c("1").as_ptr()),
            AbacusStatus::InvalidArgument
        );

        let workload = abacus_workload_preset(c("demo-inter").as_ptr());
        let report = abacus_run(workload, c("simd").as_ptr(), c("flashabacus").as_ptr(), params);
        assert!(report.is_null());
        assert!(last_error().contains("baseline"), "{}", last_error());

        let report = abacus_run(workload, c("warp9").as_ptr(), c("baseline").as_ptr(), params);
        assert!(report.is_null());
        assert!(last_error().contains("unknown policy"));

        abacus_workload_free(workload);
        abacus_params_free(params);
        // Null tolerance.
        abacus_workload_free(std::ptr::null_mut());
        abacus_report_free(std::ptr::null_mut());
        abacus_params_free(std::ptr::null_mut());
        assert!(abacus_report_makespan_secs(std::ptr::null()).is_nan());
    }
}

#[test]
fn workload_parse_round_trip_via_ffi() {
    unsafe {
        let doc = r#"
name = "ffi"
classification = "mixed"

[app.0.kernel.0.microblock.0]
screens = 2
instructions = 8000
input_range = [0, 131072]
"#;
        let workload = abacus_workload_parse(c(doc).as_ptr(), std::ptr::null());
        assert!(!workload.is_null(), "{}", last_error());
        let report = abacus_run(
            workload,
            c("interdy").as_ptr(),
            c("flashabacus").as_ptr(),
            std::ptr::null(),
        );
        assert!(!report.is_null(), "{}", last_error());
        assert_eq!(abacus_report_kernel_count(report), 1);
        abacus_report_free(report);
        abacus_workload_free(workload);

        let broken = abacus_workload_parse(c("name = ").as_ptr(), std::ptr::null());
        assert!(broken.is_null());
        assert!(last_error().contains("syntax error"), "{}", last_error());
    }
}
