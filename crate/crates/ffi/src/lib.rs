//! C interface to `sogmnav`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a
//! [`SogmnavStatus`]; on failure a description is kept per thread and can be
//! read with [`sogmnav_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sogmnav::config::ExperimentConfig;
use sogmnav::predict::PredictorKind;
use sogmnav::sim::{compute_metrics, run_session, SessionLog, World};
use sogmnav::srm::{sogm_to_srm, Srm};
use sogmnav::annotate::Sogm;
use sogmnav::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SogmnavStatus {
    Ok = 0,
    InvalidInput = 1,
    OutOfRange = 2,
    EmptyMap = 3,
    Divergence = 4,
    Frame = 5,
    Format = 6,
    Stale = 7,
    Unreachable = 8,
    Optimization = 9,
    Config = 10,
    Io = 11,
    NullPointer = 12,
    Panic = 13,
}

/// Prediction source for a simulated session.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SogmnavPredictor {
    NoPreds = 0,
    IgnoreDyn = 1,
    LinSogm = 2,
    GtSogm = 3,
    External = 4,
}

impl From<SogmnavPredictor> for PredictorKind {
    fn from(p: SogmnavPredictor) -> Self {
        match p {
            SogmnavPredictor::NoPreds => PredictorKind::NoPreds,
            SogmnavPredictor::IgnoreDyn => PredictorKind::IgnoreDyn,
            SogmnavPredictor::LinSogm => PredictorKind::LinSogm,
            SogmnavPredictor::GtSogm => PredictorKind::GtSogm,
            SogmnavPredictor::External => PredictorKind::External,
        }
    }
}

/// Session summary. Percentages are in percent.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SogmnavMetrics {
    pub t_f: f64,
    pub complete: bool,
    pub collision_pct: f64,
    pub risk_pct: f64,
    pub aas: f64,
    pub slow_pct: f64,
    pub als: f64,
    pub backward_pct: f64,
}

/// Risk value and gradient at one query point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SogmnavRiskSample {
    pub static_value: f64,
    pub static_grad: [f64; 2],
    pub dynamic_value: f64,
    pub dynamic_grad: [f64; 2],
    pub clamped: bool,
}

/// Experiment configuration.
pub struct SogmnavConfig(ExperimentConfig);
/// Simulated world.
pub struct SogmnavWorld(World);
/// Recorded simulation session.
pub struct SogmnavLog(SessionLog);
/// Spatiotemporal risk map.
pub struct SogmnavSrm(Srm);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SogmnavStatus {
    match e {
        Error::InvalidInput(_) => SogmnavStatus::InvalidInput,
        Error::OutOfRange { .. } => SogmnavStatus::OutOfRange,
        Error::EmptyMap => SogmnavStatus::EmptyMap,
        Error::Divergence { .. } => SogmnavStatus::Divergence,
        Error::Frame { .. } => SogmnavStatus::Frame,
        Error::Format { .. } => SogmnavStatus::Format,
        Error::Stale { .. } => SogmnavStatus::Stale,
        Error::Unreachable => SogmnavStatus::Unreachable,
        Error::Optimization(_) => SogmnavStatus::Optimization,
        Error::Config(_) => SogmnavStatus::Config,
        Error::Io { .. } => SogmnavStatus::Io,
    }
}

enum Failure {
    Lib(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SogmnavStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SogmnavStatus::Ok,
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("{what} is null"));
            SogmnavStatus::NullPointer
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SogmnavStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sogmnav_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn sogmnav_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Library version, a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sogmnav_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_config_default(out_config: *mut *mut SogmnavConfig) -> SogmnavStatus {
    guard(|| {
        *out(out_config, "out_config")? = boxed(SogmnavConfig(ExperimentConfig::default()));
        Ok(())
    })
}

/// Parses a TOML configuration. Unknown keys and invalid values fail with
/// `Config`.
///
/// # Safety
/// `toml` must be a nul-terminated string; `out_config` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_config_from_toml(
    toml: *const c_char,
    out_config: *mut *mut SogmnavConfig,
) -> SogmnavStatus {
    guard(|| {
        let slot = out(out_config, "out_config")?;
        let cfg = ExperimentConfig::from_toml(text(toml, "toml")?)?;
        *slot = boxed(SogmnavConfig(cfg));
        Ok(())
    })
}

/// # Safety
/// `config` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_config_free(config: *mut SogmnavConfig) {
    free(config)
}

/// The bundled atrium.
///
/// # Safety
/// `out_world` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_world_atrium(out_world: *mut *mut SogmnavWorld) -> SogmnavStatus {
    guard(|| {
        *out(out_world, "out_world")? = boxed(SogmnavWorld(World::atrium()));
        Ok(())
    })
}

/// Parses a world description in the text format read by the CLI.
///
/// # Safety
/// `description` must be a nul-terminated string; `out_world` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_world_parse(
    description: *const c_char,
    out_world: *mut *mut SogmnavWorld,
) -> SogmnavStatus {
    guard(|| {
        let slot = out(out_world, "out_world")?;
        let world = World::parse(text(description, "description")?)?;
        *slot = boxed(SogmnavWorld(world));
        Ok(())
    })
}

/// # Safety
/// `world` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_world_free(world: *mut SogmnavWorld) {
    free(world)
}

/// Simulates one closed-loop session.
///
/// # Safety
/// Handles must be live; `out_log` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_run_session(
    world: *const SogmnavWorld,
    config: *const SogmnavConfig,
    predictor: SogmnavPredictor,
    seed: u64,
    out_log: *mut *mut SogmnavLog,
) -> SogmnavStatus {
    guard(|| {
        let world = &deref(world, "world")?.0;
        let config = &deref(config, "config")?.0;
        let slot = out(out_log, "out_log")?;
        let log = run_session(world, &config.scenario(), predictor.into(), seed)?;
        *slot = boxed(SogmnavLog(log));
        Ok(())
    })
}

/// # Safety
/// `path` must be a nul-terminated string; `out_log` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_log_load(path: *const c_char, out_log: *mut *mut SogmnavLog) -> SogmnavStatus {
    guard(|| {
        let slot = out(out_log, "out_log")?;
        let log = SessionLog::load(&PathBuf::from(text(path, "path")?))?;
        *slot = boxed(SogmnavLog(log));
        Ok(())
    })
}

/// # Safety
/// `log` must be live; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_log_save(log: *const SogmnavLog, path: *const c_char) -> SogmnavStatus {
    guard(|| {
        let log = &deref(log, "log")?.0;
        log.save(&PathBuf::from(text(path, "path")?))?;
        Ok(())
    })
}

/// Number of recorded ticks, 0 for a null handle.
///
/// # Safety
/// `log` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_log_tick_count(log: *const SogmnavLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.ticks.len())
}

/// # Safety
/// `log` must be live; `out_metrics` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_log_metrics(
    log: *const SogmnavLog,
    out_metrics: *mut SogmnavMetrics,
) -> SogmnavStatus {
    guard(|| {
        let log = &deref(log, "log")?.0;
        let slot = out(out_metrics, "out_metrics")?;
        let m = compute_metrics(log)?;
        *slot = SogmnavMetrics {
            t_f: m.t_f,
            complete: m.complete,
            collision_pct: m.collision_pct,
            risk_pct: m.risk_pct,
            aas: m.aas,
            slow_pct: m.slow_pct,
            als: m.als,
            backward_pct: m.backward_pct,
        };
        Ok(())
    })
}

/// # Safety
/// `log` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_log_free(log: *mut SogmnavLog) {
    free(log)
}

/// Reads a `.sogm` grid file and converts it to a risk map with the
/// configuration's risk parameters.
///
/// # Safety
/// `path` must be a nul-terminated string; `config` live; `out_srm` valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_srm_from_sogm_file(
    path: *const c_char,
    config: *const SogmnavConfig,
    out_srm: *mut *mut SogmnavSrm,
) -> SogmnavStatus {
    guard(|| {
        let config = &deref(config, "config")?.0;
        let slot = out(out_srm, "out_srm")?;
        let (sogm, _) = Sogm::load(&PathBuf::from(text(path, "path")?))?;
        *slot = boxed(SogmnavSrm(sogm_to_srm(&sogm, &config.srm)));
        Ok(())
    })
}

/// Risk at `(x, y)` and time `t`. Queries outside the grid are clamped to its
/// border and flagged.
///
/// # Safety
/// `srm` must be live; `out_sample` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_srm_sample(
    srm: *const SogmnavSrm,
    x: f64,
    y: f64,
    t: f64,
    out_sample: *mut SogmnavRiskSample,
) -> SogmnavStatus {
    guard(|| {
        let srm = &deref(srm, "srm")?.0;
        let slot = out(out_sample, "out_sample")?;
        if !(x.is_finite() && y.is_finite() && t.is_finite()) {
            return Err(Error::InvalidInput("query must be finite".into()).into());
        }
        let s = srm.sample(x, y, t);
        *slot = SogmnavRiskSample {
            static_value: s.static_value,
            static_grad: [s.static_grad.x, s.static_grad.y],
            dynamic_value: s.dynamic_value,
            dynamic_grad: [s.dynamic_grad.x, s.dynamic_grad.y],
            clamped: s.clamped,
        };
        Ok(())
    })
}

/// # Safety
/// `srm` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sogmnav_srm_free(srm: *mut SogmnavSrm) {
    free(srm)
}
