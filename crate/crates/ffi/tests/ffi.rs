use std::ffi::{CStr, CString};
use std::ptr;

use rtbench_ffi::*;

fn last_error() -> String {
    let p = rtb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn percentile_and_planner() {
    let data: Vec<u64> = (1..=1000).collect();
    let mut out = 0u64;
    unsafe {
        assert_eq!(rtb_percentile(data.as_ptr(), data.len(), 0.999, &mut out), RtbStatus::Ok);
        assert_eq!(out, 999);
        assert_eq!(rtb_percentile(data.as_ptr(), 0, 0.5, &mut out), RtbStatus::InvalidArgument);
        assert!(last_error().contains("no samples"));
        assert_eq!(rtb_percentile(ptr::null(), 3, 0.5, &mut out), RtbStatus::NullPointer);
        assert_eq!(rtb_min_query_count(0.999, 0.99, &mut out), RtbStatus::Ok);
        assert_eq!(out, 26514);
    }
}

#[test]
fn splitmix_vector() {
    let (mut state, mut out) = (0u64, 0u64);
    unsafe {
        assert_eq!(rtb_splitmix64_next(&mut state, &mut out), RtbStatus::Ok);
        assert_eq!(out, 0xE220A8397B1DCDAF);
        let first = out;
        assert_eq!(rtb_splitmix64_next(&mut state, &mut out), RtbStatus::Ok);
        assert_ne!(out, first);
    }
}

#[test]
fn gate_and_iou() {
    let (mut passed, mut threshold) = (false, 0.0);
    unsafe {
        assert_eq!(
            rtb_accuracy_gate(0.7141, 0.7141, 0.999, &mut passed, &mut threshold),
            RtbStatus::Ok
        );
        assert!(passed);
        rtb_accuracy_gate(0.6943, 0.7141, 0.999, &mut passed, &mut threshold);
        assert!(!passed);
        assert_eq!(
            rtb_accuracy_gate(0.5, 0.0, 0.999, &mut passed, &mut threshold),
            RtbStatus::InvalidArgument
        );

        let a = RtbBox { x1: 0.0, y1: 0.0, x2: 2.0, y2: 2.0 };
        let b = RtbBox { x1: 1.0, y1: 1.0, x2: 3.0, y2: 3.0 };
        let mut v = 0.0;
        assert_eq!(rtb_iou(&a, &b, &mut v), RtbStatus::Ok);
        assert_eq!(v, 1.0 / 7.0);
        let bad = RtbBox { x1: 1.0, y1: 0.0, x2: 0.0, y2: 1.0 };
        assert_eq!(rtb_iou(&a, &bad, &mut v), RtbStatus::InvalidArgument);
    }
}

#[test]
fn mean_ap_from_text() {
    let text = CString::new("0,gt,0,0,0,10,10\n0,pred,0,50,50,60,60,0.9\n0,pred,0,0,0,10,10,0.8\n").unwrap();
    let mut v = 0.0;
    unsafe {
        assert_eq!(rtb_mean_ap(text.as_ptr(), 0.5, &mut v), RtbStatus::Ok);
    }
    assert_eq!(v, 0.5);
    let bad = CString::new("0,gt,0\n").unwrap();
    unsafe {
        assert_eq!(rtb_mean_ap(bad.as_ptr(), 0.5, &mut v), RtbStatus::Parse);
    }
    assert!(last_error().starts_with("line 1"));
}

#[test]
fn run_round_trip_through_handles() {
    unsafe {
        let settings = rtb_settings_new();
        let cfg = CString::new("min_duration_ns = 0\nmin_query_count = 50\nsample_bytes = 32\nsut_endpoint = sim:fixed:10ms\n").unwrap();
        assert_eq!(rtb_settings_apply(settings, cfg.as_ptr()), RtbStatus::Ok);
        let bad = CString::new("bogus = 1\n").unwrap();
        assert_eq!(rtb_settings_apply(settings, bad.as_ptr()), RtbStatus::Parse);

        let profile = CString::new("ssd").unwrap();
        let mut run = ptr::null_mut();
        assert_eq!(rtb_run(profile.as_ptr(), settings, true, &mut run), RtbStatus::Ok);
        assert_eq!(rtb_run_query_count(run), 50);
        let mut summary = RtbSummary::default();
        assert_eq!(rtb_run_summary(run, &mut summary), RtbStatus::Ok);
        assert_eq!(summary.count, 50);
        assert_eq!(summary.p999_ns, 10_000_000);

        let mut text = ptr::null_mut();
        assert_eq!(rtb_run_write_log(run, &mut text), RtbStatus::Ok);
        let mut parsed = ptr::null_mut();
        assert_eq!(rtb_log_parse(text, &mut parsed), RtbStatus::Ok);
        let (mut embedded, mut present) = (RtbSummary::default(), false);
        assert_eq!(rtb_run_embedded_summary(parsed, &mut embedded, &mut present), RtbStatus::Ok);
        assert!(present);
        assert_eq!(embedded, summary);

        let unknown = CString::new("nope").unwrap();
        let mut none = ptr::null_mut();
        assert_eq!(rtb_run(unknown.as_ptr(), settings, true, &mut none), RtbStatus::InvalidArgument);
        assert!(none.is_null());

        rtb_string_free(text);
        rtb_run_free(parsed);
        rtb_run_free(run);
        rtb_settings_free(settings);
        rtb_run_free(ptr::null_mut());
    }
}

#[test]
fn null_arguments() {
    unsafe {
        assert_eq!(rtb_min_query_count(0.9, 0.99, ptr::null_mut()), RtbStatus::NullPointer);
        assert!(last_error().contains("out"));
        assert_eq!(rtb_log_parse(ptr::null(), &mut ptr::null_mut()), RtbStatus::NullPointer);
    }
    let v = unsafe { CStr::from_ptr(rtb_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
