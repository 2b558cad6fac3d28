//! C interface: configs, step-wise training and whole train/transfer
//! pipelines behind opaque handles.
//!
//! Every fallible call returns a [`ModacStatus`]; on failure the message is
//! kept per thread and read with [`modac_last_error`]. Handles are freed
//! with their `_free` function, strings with [`modac_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use modac::harness::{pipeline, selftest, RunConfig};
use modac::metalearn::Learner;
use modac::Error;

/// Status of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModacStatus {
    Ok = 0,
    /// Null pointer, bad UTF-8 or an argument out of range.
    InvalidArgument = 1,
    Config = 2,
    /// Non-finite values or divergence.
    Numeric = 3,
    /// I/O, checkpoint or any other failure, panics included.
    Failure = 4,
}

/// A validated run config.
pub struct ModacConfig {
    cfg: RunConfig,
}

/// An agent training on the config's training tasks.
pub struct ModacLearner {
    learner: Learner,
}

/// Outcome of one outer iteration.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModacReport {
    pub frames: u64,
    /// 1 once an episode has finished; the return fields are 0 before.
    pub has_return: i32,
    pub return_mean: f64,
    pub return_sem: f64,
    pub option_step_frac: f64,
    pub option_pick_frac: f64,
    /// 0 when no option was picked.
    pub mean_option_len: f64,
    pub meta_grad_norm: f64,
}

/// Headline numbers of a train and transfer pipeline.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ModacSummary {
    /// 0 for agents that skip training.
    pub train_frames: u64,
    pub train_mean_option_len: f64,
    pub transfer_frames: u64,
    pub transfer_auc: f64,
    pub transfer_final_return: f64,
    pub transfer_option_pick_frac: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> ModacStatus {
    match e {
        Error::Config(_) => ModacStatus::Config,
        Error::InvalidArgument(_) => ModacStatus::InvalidArgument,
        _ => match e.exit_code() {
            3 => ModacStatus::Numeric,
            _ => ModacStatus::Failure,
        },
    }
}

struct Fail(ModacStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn bad_arg(what: &str) -> Fail {
    Fail(ModacStatus::InvalidArgument, what.to_string())
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> ModacStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            ModacStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            ModacStatus::Failure
        }
    }
}

/// # Safety
/// `s` is null or a NUL-terminated string valid for the call.
unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(bad_arg(&format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| bad_arg(&format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn modac_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn modac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` is null or came from this library and was not freed before.
#[no_mangle]
pub unsafe extern "C" fn modac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a TOML config; null `toml` gives the defaults.
///
/// # Safety
/// `toml` is null or NUL-terminated; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn modac_config_new(
    toml: *const c_char,
    out: *mut *mut ModacConfig,
) -> ModacStatus {
    guard(|| {
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        let src = if toml.is_null() {
            ""
        } else {
            text(toml, "toml")?
        };
        let cfg = RunConfig::from_toml(src, &[])?;
        *out = Box::into_raw(Box::new(ModacConfig { cfg }));
        Ok(())
    })
}

/// Sets a dotted key, e.g. `hp.switching_cost` to `0.1`. The config is
/// left unchanged when the result would be invalid.
///
/// # Safety
/// `cfg` is a live config; `key` and `value` are NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn modac_config_set(
    cfg: *mut ModacConfig,
    key: *const c_char,
    value: *const c_char,
) -> ModacStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| bad_arg("cfg is null"))?;
        let next = cfg
            .cfg
            .with_override(text(key, "key")?, text(value, "value")?)?;
        cfg.cfg = next;
        Ok(())
    })
}

/// The config as TOML; free with [`modac_string_free`]. Null on a null
/// handle.
///
/// # Safety
/// `cfg` is null or a live config.
#[no_mangle]
pub unsafe extern "C" fn modac_config_to_toml(cfg: *const ModacConfig) -> *mut c_char {
    match cfg.as_ref() {
        Some(c) => CString::new(c.cfg.to_toml()).map_or(ptr::null_mut(), CString::into_raw),
        None => ptr::null_mut(),
    }
}

/// # Safety
/// `cfg` is null or a config from [`modac_config_new`] not freed before.
#[no_mangle]
pub unsafe extern "C" fn modac_config_free(cfg: *mut ModacConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// An agent of the config's method on its training tasks.
///
/// # Safety
/// `cfg` is a live config; `out` points to writable storage.
#[no_mangle]
pub unsafe extern "C" fn modac_learner_new(
    cfg: *const ModacConfig,
    seed: u64,
    out: *mut *mut ModacLearner,
) -> ModacStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| bad_arg("cfg is null"))?.cfg;
        if out.is_null() {
            return Err(bad_arg("out is null"));
        }
        let tasks = cfg.tasks()?;
        let learner = Learner::new(
            cfg.method,
            cfg.hp.clone(),
            &tasks.spec,
            &tasks.train,
            &tasks.validation,
            seed,
        )?;
        *out = Box::into_raw(Box::new(ModacLearner { learner }));
        Ok(())
    })
}

/// Runs one outer iteration and fills `report` if it is not null.
///
/// # Safety
/// `learner` is a live learner; `report` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn modac_learner_iterate(
    learner: *mut ModacLearner,
    report: *mut ModacReport,
) -> ModacStatus {
    guard(|| {
        let l = &mut learner
            .as_mut()
            .ok_or_else(|| bad_arg("learner is null"))?
            .learner;
        let r = l.iterate()?;
        if !r.meta_grad_norm.is_finite()
            || r.returns
                .is_some_and(|(m, s)| !m.is_finite() || !s.is_finite())
        {
            return Err(Fail(
                ModacStatus::Numeric,
                format!("non-finite report at frame {}", r.frames),
            ));
        }
        if let Some(out) = report.as_mut() {
            let u = r.usage.stats();
            let (m, s) = r.returns.unwrap_or((0.0, 0.0));
            *out = ModacReport {
                frames: r.frames,
                has_return: r.returns.is_some() as i32,
                return_mean: m,
                return_sem: s,
                option_step_frac: u.option_step_frac,
                option_pick_frac: u.option_pick_frac,
                mean_option_len: u.mean_option_len.unwrap_or(0.0),
                meta_grad_norm: r.meta_grad_norm,
            };
        }
        Ok(())
    })
}

/// Frames consumed so far; 0 for a null handle.
///
/// # Safety
/// `learner` is null or a live learner.
#[no_mangle]
pub unsafe extern "C" fn modac_learner_frames(learner: *const ModacLearner) -> u64 {
    learner.as_ref().map_or(0, |l| l.learner.frames())
}

/// # Safety
/// `learner` is null or came from [`modac_learner_new`] and was not freed.
#[no_mangle]
pub unsafe extern "C" fn modac_learner_free(learner: *mut ModacLearner) {
    if !learner.is_null() {
        drop(Box::from_raw(learner));
    }
}

/// Train then transfer one seed, writing run directories under `dir`.
///
/// # Safety
/// `cfg` is a live config, `dir` NUL-terminated, `summary` null or
/// writable.
#[no_mangle]
pub unsafe extern "C" fn modac_pipeline(
    cfg: *const ModacConfig,
    seed: u64,
    dir: *const c_char,
    summary: *mut ModacSummary,
) -> ModacStatus {
    guard(|| {
        let cfg = &cfg.as_ref().ok_or_else(|| bad_arg("cfg is null"))?.cfg;
        let dir = Path::new(text(dir, "dir")?);
        let p = pipeline(cfg, seed, dir)?;
        if let Some(out) = summary.as_mut() {
            let t = &p.transfer.summary;
            *out = ModacSummary {
                train_frames: p.train.as_ref().map_or(0, |r| r.summary.frames),
                train_mean_option_len: p.train.as_ref().map_or(0.0, |r| r.summary.mean_option_len),
                transfer_frames: t.frames,
                transfer_auc: t.auc,
                transfer_final_return: t.final_return,
                transfer_option_pick_frac: t.option_pick_frac,
            };
        }
        Ok(())
    })
}

/// Runs the gradient and return oracle checks. Fails with
/// `MODAC_STATUS_NUMERIC` when any check fails.
///
/// # Safety
/// `passed` and `total` are null or writable.
#[no_mangle]
pub unsafe extern "C" fn modac_selftest(passed: *mut u32, total: *mut u32) -> ModacStatus {
    guard(|| {
        let checks = selftest()?;
        let ok = checks.iter().filter(|c| c.passed).count();
        if let Some(p) = passed.as_mut() {
            *p = ok as u32;
        }
        if let Some(t) = total.as_mut() {
            *t = checks.len() as u32;
        }
        match checks.iter().find(|c| !c.passed) {
            Some(c) => Err(Fail(
                ModacStatus::Numeric,
                format!("{}: {}", c.name, c.detail),
            )),
            None => Ok(()),
        }
    })
}
