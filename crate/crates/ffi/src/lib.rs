//! C ABI over `wla-core`.
//!
//! Every function returns a [`WlaStatus`]; on failure the message is
//! available from [`wla_last_error`] on the same thread. Handles are opaque
//! and owned by the caller, who releases them with the matching `_free`.
//! Node indices and time steps are 0-based, as in the Rust API.
//!
//! The generated header lives at `include/wla.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use wla_core::config::{parse_config, ExperimentConfig, Kind};
use wla_core::consensus::WeightMatrix;
use wla_core::harness::{execute, preset_config, run_experiment, RunResult};

/// Bumped on any incompatible change to the functions below.
pub const WLA_ABI_VERSION: u32 = 1;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WlaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ContractViolation = 4,
    InvalidConfig = 5,
    Numerical = 6,
    Parse = 7,
    UnknownPreset = 8,
    Io = 9,
    Export = 10,
    /// The result has no data of the requested kind.
    WrongKind = 11,
    OutOfRange = 12,
    /// The caller's buffer is too small; the needed size was written back.
    BufferTooSmall = 13,
    Panic = 14,
}

/// Experiment family of a config or result.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WlaKind {
    Consensus = 0,
    Sweep = 1,
    Clock = 2,
}

/// Which weight matrix to read from a result.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WlaWeights {
    /// Consensus weights.
    Consensus = 0,
    /// Clock skew weights.
    Skew = 1,
    /// Clock offset weights.
    Offset = 2,
}

/// A parsed, validated experiment.
pub struct WlaExperiment {
    config: ExperimentConfig,
}

/// The outcome of running a [`WlaExperiment`].
pub struct WlaResult {
    result: RunResult,
    /// Clock disagreement flattened to `(dx', dx'', dtau)` triples.
    clock_flat: Vec<f64>,
}

struct Failure(WlaStatus, String);

impl From<wla_core::Error> for Failure {
    fn from(e: wla_core::Error) -> Self {
        use wla_core::Error as E;
        let status = match &e {
            E::Argument(_) => WlaStatus::InvalidArgument,
            E::Contract(_) => WlaStatus::ContractViolation,
            E::Validation { .. } => WlaStatus::InvalidConfig,
            E::Numerical(_) => WlaStatus::Numerical,
            E::Parse { .. } => WlaStatus::Parse,
            E::UnknownPreset(_) => WlaStatus::UnknownPreset,
            E::Io { .. } => WlaStatus::Io,
            E::Export(_) => WlaStatus::Export,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|cell| *cell.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WlaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            WlaStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            WlaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(WlaStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(WlaStatus::InvalidUtf8, format!("`{what}`: {e}")))
}

fn kind_of(k: Kind) -> WlaKind {
    match k {
        Kind::Consensus => WlaKind::Consensus,
        Kind::Sweep => WlaKind::Sweep,
        Kind::Clock => WlaKind::Clock,
    }
}

fn wrong_kind(want: &str) -> Failure {
    Failure(WlaStatus::WrongKind, format!("result holds no {want} data"))
}

/// Returns [`WLA_ABI_VERSION`].
#[no_mangle]
pub extern "C" fn wla_abi_version() -> u32 {
    WLA_ABI_VERSION
}

/// Message for the last failing call on this thread; empty after a success.
/// The pointer stays valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn wla_last_error() -> *const c_char {
    LAST_ERROR.with(|cell| cell.borrow().as_ptr())
}

/// Parses and validates a TOML experiment config.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_from_toml(toml: *const c_char, out: *mut *mut WlaExperiment) -> WlaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let loaded = parse_config(str_arg(toml, "toml")?, "<ffi>")?;
        *out = Box::into_raw(Box::new(WlaExperiment { config: loaded.config }));
        Ok(())
    })
}

/// Loads a shipped preset by name.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_from_preset(name: *const c_char, out: *mut *mut WlaExperiment) -> WlaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let loaded = preset_config(str_arg(name, "name")?)?;
        *out = Box::into_raw(Box::new(WlaExperiment { config: loaded.config }));
        Ok(())
    })
}

/// # Safety
/// `exp` must come from this library and not be freed; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_kind(exp: *const WlaExperiment, out: *mut WlaKind) -> WlaStatus {
    guard(|| {
        let exp = deref(exp, "exp")?;
        *deref_mut(out, "out")? = kind_of(exp.config.kind());
        Ok(())
    })
}

/// Replaces the master seed.
///
/// # Safety
/// `exp` must come from this library and not be freed.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_set_seed(exp: *mut WlaExperiment, seed: u64) -> WlaStatus {
    guard(|| {
        let exp = deref_mut(exp, "exp")?;
        exp.config = exp.config.with_overrides(Some(seed), None, None)?.config;
        Ok(())
    })
}

/// Normalized TOML of the experiment. Writes at most `cap` bytes including
/// the terminating NUL and stores the full size (with NUL) in `needed`.
///
/// # Safety
/// `buf` must hold `cap` bytes (it may be null when `cap` is 0); `needed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_to_toml(
    exp: *const WlaExperiment,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> WlaStatus {
    guard(|| {
        let exp = deref(exp, "exp")?;
        let needed = deref_mut(needed, "needed")?;
        let text = exp.config.to_toml()?;
        *needed = text.len() + 1;
        if cap < *needed {
            return Err(Failure(
                WlaStatus::BufferTooSmall,
                format!("need {} bytes, have {cap}", *needed),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        Ok(())
    })
}

/// # Safety
/// `exp` must be null or come from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_free(exp: *mut WlaExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}

/// Runs the experiment in memory. `jobs` bounds worker threads (0 = all cores).
///
/// # Safety
/// `exp` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_run(exp: *const WlaExperiment, jobs: usize, out: *mut *mut WlaResult) -> WlaStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        *out = ptr::null_mut();
        let exp = deref(exp, "exp")?;
        let result = execute(&exp.config, jobs)?;
        let clock_flat = match &result {
            RunResult::Clock(t) => t.disagreement.iter().flat_map(|d| [d.0, d.1, d.2]).collect(),
            _ => Vec::new(),
        };
        *out = Box::into_raw(Box::new(WlaResult { result, clock_flat }));
        Ok(())
    })
}

/// Runs the experiment and writes its exports and `manifest.json` to `dir`.
/// The 64-character hex outputs digest plus NUL goes to `digest_out`.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `digest_out` must be null or hold 65 bytes.
#[no_mangle]
pub unsafe extern "C" fn wla_experiment_run_to_dir(
    exp: *const WlaExperiment,
    dir: *const c_char,
    jobs: usize,
    digest_out: *mut c_char,
) -> WlaStatus {
    guard(|| {
        let exp = deref(exp, "exp")?;
        let dir = str_arg(dir, "dir")?;
        let (_, manifest) = run_experiment(&exp.config, Path::new(dir), jobs, None)?;
        if !digest_out.is_null() {
            let d = manifest.outputs_digest.as_bytes();
            ptr::copy_nonoverlapping(d.as_ptr(), digest_out.cast::<u8>(), d.len());
            *digest_out.add(d.len()) = 0;
        }
        Ok(())
    })
}

/// # Safety
/// `res` must be null or come from this library; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn wla_result_free(res: *mut WlaResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_kind(res: *const WlaResult, out: *mut WlaKind) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        *deref_mut(out, "out")? = match res.result {
            RunResult::Consensus { .. } => WlaKind::Consensus,
            RunResult::Sweep(_) => WlaKind::Sweep,
            RunResult::Clock(_) => WlaKind::Clock,
        };
        Ok(())
    })
}

/// Disagreement `V(x(k))` for `k = 0..=max_iter` of replica 0. The array is
/// owned by `res`.
///
/// # Safety
/// `res` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_disagreement(
    res: *const WlaResult,
    data: *mut *const f64,
    len: *mut usize,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let (data, len) = (deref_mut(data, "data")?, deref_mut(len, "len")?);
        let RunResult::Consensus { trace, .. } = &res.result else {
            return Err(wrong_kind("consensus"));
        };
        *data = trace.disagreement.as_ptr();
        *len = trace.disagreement.len();
        Ok(())
    })
}

/// Final state of replica 0, one value per node. Owned by `res`.
///
/// # Safety
/// `res` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_final_state(
    res: *const WlaResult,
    data: *mut *const f64,
    len: *mut usize,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let (data, len) = (deref_mut(data, "data")?, deref_mut(len, "len")?);
        let RunResult::Consensus { trace, .. } = &res.result else {
            return Err(wrong_kind("consensus"));
        };
        *data = trace.final_state.as_ptr();
        *len = trace.final_state.len();
        Ok(())
    })
}

/// First step at which replica 0's disagreement is below `threshold`, or
/// `max_iter` if it never is.
///
/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_convergence_count(
    res: *const WlaResult,
    threshold: f64,
    out: *mut usize,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let RunResult::Consensus { trace, .. } = &res.result else {
            return Err(wrong_kind("consensus"));
        };
        *deref_mut(out, "out")? = trace.convergence_count(threshold);
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_replica_count(res: *const WlaResult, out: *mut usize) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let RunResult::Consensus { replicas, .. } = &res.result else {
            return Err(wrong_kind("consensus"));
        };
        *deref_mut(out, "out")? = replicas.len();
        Ok(())
    })
}

/// Summary of replica `index`. Any output pointer may be null.
///
/// # Safety
/// `res` must come from this library; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_replica(
    res: *const WlaResult,
    index: usize,
    convergence_count: *mut usize,
    converged: *mut bool,
    final_disagreement: *mut f64,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let RunResult::Consensus { replicas, .. } = &res.result else {
            return Err(wrong_kind("consensus"));
        };
        let s = replicas.get(index).ok_or_else(|| {
            Failure(WlaStatus::OutOfRange, format!("replica {index} of {}", replicas.len()))
        })?;
        if let Some(p) = convergence_count.as_mut() {
            *p = s.convergence_count;
        }
        if let Some(p) = converged.as_mut() {
            *p = s.converged;
        }
        if let Some(p) = final_disagreement.as_mut() {
            *p = s.final_disagreement;
        }
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_sweep_len(res: *const WlaResult, out: *mut usize) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let RunResult::Sweep(points) = &res.result else {
            return Err(wrong_kind("sweep"));
        };
        *deref_mut(out, "out")? = points.len();
        Ok(())
    })
}

/// Fault probability and mean convergence count of sweep point `index`.
///
/// # Safety
/// `res` must come from this library; `fault_prob` and `mean_count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_sweep_point(
    res: *const WlaResult,
    index: usize,
    fault_prob: *mut f64,
    mean_count: *mut f64,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let RunResult::Sweep(points) = &res.result else {
            return Err(wrong_kind("sweep"));
        };
        let p = points
            .get(index)
            .ok_or_else(|| Failure(WlaStatus::OutOfRange, format!("point {index} of {}", points.len())))?;
        *deref_mut(fault_prob, "fault_prob")? = p.fault_prob;
        *deref_mut(mean_count, "mean_count")? = p.mean_count;
        Ok(())
    })
}

/// Clock disagreement as `len / 3` consecutive `(dx', dx'', dtau)` triples,
/// one per round starting at 0. Owned by `res`.
///
/// # Safety
/// `res` must come from this library; `data` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_clock_disagreement(
    res: *const WlaResult,
    data: *mut *const f64,
    len: *mut usize,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let (data, len) = (deref_mut(data, "data")?, deref_mut(len, "len")?);
        if !matches!(res.result, RunResult::Clock(_)) {
            return Err(wrong_kind("clock"));
        }
        *data = res.clock_flat.as_ptr();
        *len = res.clock_flat.len();
        Ok(())
    })
}

/// Copies the `n x n` weight matrix exported at step `k` into `out`,
/// row-major with `out[i * n + j] = a_ij`. `n` is written to `n_out`.
///
/// # Safety
/// `res` must come from this library; `out` must hold `cap` doubles; `n_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_result_weights(
    res: *const WlaResult,
    which: WlaWeights,
    k: usize,
    out: *mut f64,
    cap: usize,
    n_out: *mut usize,
) -> WlaStatus {
    guard(|| {
        let res = deref(res, "res")?;
        let n_out = deref_mut(n_out, "n_out")?;
        let snaps = match (&res.result, which) {
            (RunResult::Consensus { trace, .. }, WlaWeights::Consensus) => &trace.snapshots,
            (RunResult::Clock(t), WlaWeights::Skew) => &t.skew_snapshots,
            (RunResult::Clock(t), WlaWeights::Offset) => &t.offset_snapshots,
            _ => return Err(wrong_kind("such weight")),
        };
        let m: &WeightMatrix = snaps
            .get(&k)
            .ok_or_else(|| Failure(WlaStatus::OutOfRange, format!("no weight snapshot at step {k}")))?;
        let flat = m.as_slice();
        *n_out = m.n();
        if cap < flat.len() {
            return Err(Failure(
                WlaStatus::BufferTooSmall,
                format!("need {} doubles, have {cap}", flat.len()),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        Ok(())
    })
}

/// Disagreement `sqrt(2 Σ (x_i - mean)^2 / (n - 1))` of `n >= 1` values (0 for one value).
///
/// # Safety
/// `x` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wla_disagreement(x: *const f64, n: usize, out: *mut f64) -> WlaStatus {
    guard(|| {
        if x.is_null() {
            return Err(null("x"));
        }
        let values = std::slice::from_raw_parts(x, n);
        let all: Vec<usize> = (0..n).collect();
        *deref_mut(out, "out")? = wla_core::consensus::disagreement(values, &all)?;
        Ok(())
    })
}
