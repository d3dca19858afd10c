//! C ABI over the harness.
//!
//! Every fallible function returns an [`RtbStatus`]; on failure a message is
//! available from [`rtb_last_error`] on the same thread. Handles are opaque
//! and must be released with their matching `_free` function. Strings
//! returned by the library are released with [`rtb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use rtbench::clock::{MonotonicClock, SimClock};
use rtbench::engine::{Engine, RunLog};
use rtbench::metrics;
use rtbench::profiles::{find_profile, parse_settings, RunSettings};
use rtbench::report;
use rtbench::rng::SplitMix64;
use rtbench::stats;
use rtbench::sut::endpoint::open_sut;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RtbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    RunFailed = 4,
    Incomplete = 5,
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

type FfiResult = Result<(), (RtbStatus, String)>;

fn guard(f: impl FnOnce() -> FfiResult) -> RtbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RtbStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RtbStatus::Panic
        }
    }
}

fn null(what: &str) -> (RtbStatus, String) {
    (RtbStatus::NullPointer, format!("{what} is null"))
}

fn invalid(e: impl ToString) -> (RtbStatus, String) {
    (RtbStatus::InvalidArgument, e.to_string())
}

unsafe fn out_ref<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (RtbStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RtbStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on this thread.
#[no_mangle]
pub extern "C" fn rtb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rtb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rtb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Advances a splitmix64 state and returns the next output.
///
/// # Safety
/// `state` must point to a valid `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn rtb_splitmix64_next(state: *mut u64, out: *mut u64) -> RtbStatus {
    guard(|| {
        let state = out_ref(state, "state")?;
        let out = out_ref(out, "out")?;
        let mut rng = SplitMix64::new(*state);
        *out = rng.next();
        *state = rng.state();
        Ok(())
    })
}

/// Order statistic at rank `ceil(p * len)`.
///
/// # Safety
/// `samples` must point to `len` readable values.
#[no_mangle]
pub unsafe extern "C" fn rtb_percentile(samples: *const u64, len: usize, p: f64, out: *mut u64) -> RtbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        if samples.is_null() && len > 0 {
            return Err(null("samples"));
        }
        let s = if len == 0 { &[][..] } else { std::slice::from_raw_parts(samples, len) };
        *out = stats::percentile(s, p).map_err(invalid)?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_min_query_count(p: f64, confidence: f64, out: *mut u64) -> RtbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = stats::min_query_count(p, confidence).map_err(invalid)?;
        Ok(())
    })
}

/// # Safety
/// `passed` and `threshold` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_accuracy_gate(
    measured: f64,
    reference: f64,
    constraint: f64,
    passed: *mut bool,
    threshold: *mut f64,
) -> RtbStatus {
    guard(|| {
        let passed = out_ref(passed, "passed")?;
        let threshold = out_ref(threshold, "threshold")?;
        let g = metrics::accuracy_gate(measured, reference, constraint).map_err(invalid)?;
        *passed = g.passed;
        *threshold = g.threshold;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RtbBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

fn to_bbox(b: &RtbBox) -> Result<metrics::BBox, (RtbStatus, String)> {
    metrics::BBox::new(b.x1, b.y1, b.x2, b.y2).map_err(invalid)
}

/// # Safety
/// `a`, `b` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_iou(a: *const RtbBox, b: *const RtbBox, out: *mut f64) -> RtbStatus {
    guard(|| {
        let a = to_bbox(a.as_ref().ok_or_else(|| null("a"))?)?;
        let b = to_bbox(b.as_ref().ok_or_else(|| null("b"))?)?;
        *out_ref(out, "out")? = metrics::iou(&a, &b);
        Ok(())
    })
}

/// mAP over a detection record file's contents.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_mean_ap(text: *const c_char, iou_threshold: f64, out: *mut f64) -> RtbStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_ref(out, "out")?;
        let frames = metrics::parse_detections(text).map_err(|e| (RtbStatus::Parse, e.to_string()))?;
        *out = metrics::mean_ap(&frames, iou_threshold).map_err(invalid)?;
        Ok(())
    })
}

/// Run settings handle.
pub struct RtbSettings(RunSettings);

/// Desk-default settings.
#[no_mangle]
pub extern "C" fn rtb_settings_new() -> *mut RtbSettings {
    Box::into_raw(Box::new(RtbSettings(RunSettings::default())))
}

/// Applies settings-file text on top of the handle's current values.
///
/// # Safety
/// `settings` must come from [`rtb_settings_new`]; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rtb_settings_apply(settings: *mut RtbSettings, text: *const c_char) -> RtbStatus {
    guard(|| {
        let s = out_ref(settings, "settings")?;
        let text = str_arg(text, "text")?;
        s.0 = parse_settings(text, s.0.clone()).map_err(|e| (RtbStatus::Parse, e.to_string()))?;
        Ok(())
    })
}

/// # Safety
/// `settings` must be null or come from [`rtb_settings_new`].
#[no_mangle]
pub unsafe extern "C" fn rtb_settings_free(settings: *mut RtbSettings) {
    if !settings.is_null() {
        drop(Box::from_raw(settings));
    }
}

/// Completed or parsed run handle.
pub struct RtbRun {
    log: RunLog,
    embedded: Option<stats::RunSummary>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RtbSummary {
    pub count: u64,
    pub min_ns: u64,
    pub mean_ns: u64,
    pub max_ns: u64,
    pub p50_ns: u64,
    pub p90_ns: u64,
    pub p99_ns: u64,
    pub p999_ns: u64,
    pub overrun_count: u64,
    pub duration_ns: u64,
    pub completed_per_second: f64,
}

impl From<&stats::RunSummary> for RtbSummary {
    fn from(s: &stats::RunSummary) -> Self {
        Self {
            count: s.count,
            min_ns: s.min_ns,
            mean_ns: s.mean_ns,
            max_ns: s.max_ns,
            p50_ns: s.p50_ns,
            p90_ns: s.p90_ns,
            p99_ns: s.p99_ns,
            p999_ns: s.p999_ns,
            overrun_count: s.overrun_count,
            duration_ns: s.duration_ns,
            completed_per_second: s.completed_per_second,
        }
    }
}

/// Runs `profile` with `settings` against the endpoint named in the settings.
/// With `simulated_clock`, time is discrete-event and only `sim:` endpoints
/// make sense.
///
/// # Safety
/// `profile` NUL-terminated, `settings` a valid handle, `out` writable. On
/// `RTB_STATUS_RUN_FAILED` the partial run is still returned in `out`.
#[no_mangle]
pub unsafe extern "C" fn rtb_run(
    profile: *const c_char,
    settings: *const RtbSettings,
    simulated_clock: bool,
    out: *mut *mut RtbRun,
) -> RtbStatus {
    guard(|| {
        let name = str_arg(profile, "profile")?;
        let settings = &settings.as_ref().ok_or_else(|| null("settings"))?.0;
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let profile = find_profile(name).ok_or_else(|| invalid(format!("unknown profile `{name}`")))?;
        let mut engine = if simulated_clock {
            Engine::new(Arc::new(SimClock::new()))
        } else {
            Engine::new(Arc::new(MonotonicClock::new()))
        };
        let mut sut = open_sut(&settings.sut_endpoint, settings.seed).map_err(invalid)?;
        let (log, err) = match engine.run(sut.as_mut(), settings, &profile) {
            Ok(l) => (l, None),
            Err(f) => (*f.log, Some(f.error.to_string())),
        };
        let embedded = log.summary().ok();
        *out = Box::into_raw(Box::new(RtbRun { log, embedded }));
        match err {
            None => Ok(()),
            Some(e) => Err((RtbStatus::RunFailed, e)),
        }
    })
}

/// Parses log text into a run handle.
///
/// # Safety
/// `text` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_log_parse(text: *const c_char, out: *mut *mut RtbRun) -> RtbStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let parsed = report::parse_run(text).map_err(|e| (RtbStatus::Parse, e.to_string()))?;
        *out = Box::into_raw(Box::new(RtbRun {
            log: parsed.run,
            embedded: parsed.summary,
        }));
        Ok(())
    })
}

/// Summary recomputed from the run's trace.
///
/// # Safety
/// `run` a valid handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_run_summary(run: *const RtbRun, out: *mut RtbSummary) -> RtbStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out_ref(out, "out")?;
        let s = report::recompute_summary(&run.log).map_err(|e| (RtbStatus::Incomplete, e.to_string()))?;
        *out = RtbSummary::from(&s);
        Ok(())
    })
}

/// Summary record stored in the log, if any. `present` is false when absent.
///
/// # Safety
/// `run` a valid handle, `out` and `present` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_run_embedded_summary(
    run: *const RtbRun,
    out: *mut RtbSummary,
    present: *mut bool,
) -> RtbStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out_ref(out, "out")?;
        let present = out_ref(present, "present")?;
        *present = run.embedded.is_some();
        if let Some(s) = &run.embedded {
            *out = RtbSummary::from(s);
        }
        Ok(())
    })
}

/// Number of queries in the run's trace.
///
/// # Safety
/// `run` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rtb_run_query_count(run: *const RtbRun) -> u64 {
    run.as_ref().map_or(0, |r| r.log.trace.len() as u64)
}

/// Serialized run log. Release with [`rtb_string_free`].
///
/// # Safety
/// `run` a valid handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rtb_run_write_log(run: *const RtbRun, out: *mut *mut c_char) -> RtbStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let out = out_ref(out, "out")?;
        let records = report::run_records(&run.log, run.embedded.as_ref(), &[]);
        *out = into_c_string(report::write_log(&records));
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn rtb_run_free(run: *mut RtbRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
