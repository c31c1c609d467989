//! C ABI for the lattice-gates library: opaque handles, integer status
//! codes, and a small surface covering model setup, band structure, waveform
//! I/O, gate optimization and verification. The generated header lands in
//! `include/lattice_gates.h`.

use lattice_gates::catalog::{GateKind, GateSpec};
use lattice_gates::config::RunConfig;
use lattice_gates::lattice::{BlochBasis, LatticeModel};
use lattice_gates::propagator::Waveform;
use lattice_gates::{solver, Error};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LgStatus {
    LgOk = 0,
    LgInvalidArgument = 1,
    LgNumericalFailure = 2,
    LgNonConverged = 3,
    LgIoError = 4,
    LgNullPointer = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: &str) {
    let owned = CString::new(message.replace('\0', "?")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(owned));
}

fn status_of(err: &Error) -> LgStatus {
    match err.exit_code() {
        2 => LgStatus::LgInvalidArgument,
        3 => LgStatus::LgNonConverged,
        4 => LgStatus::LgIoError,
        _ => LgStatus::LgNumericalFailure,
    }
}

fn fail(err: Error) -> LgStatus {
    let status = status_of(&err);
    set_error(&err.to_string());
    status
}

/// Last error message of the current thread, or NULL when the previous call
/// succeeded. The pointer stays valid until the next failing call on this
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn lg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

/// Opaque lattice model handle.
pub struct LgModel {
    model: LatticeModel,
    basis: BlochBasis,
}

/// Opaque waveform handle.
pub struct LgWaveform {
    waveform: Waveform,
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, LgStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is NULL"));
        return Err(LgStatus::LgNullPointer);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        LgStatus::LgInvalidArgument
    })
}

/// Create a lattice model (depth in recoil units, basis truncation n_max,
/// dimensionless quasimomentum in [-1, 1]) and precompute its Bloch basis.
///
/// # Safety
/// `out` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn lg_model_new(
    depth: f64,
    n_max: usize,
    quasimomentum: f64,
    out: *mut *mut LgModel,
) -> LgStatus {
    if out.is_null() {
        set_error("out is NULL");
        return LgStatus::LgNullPointer;
    }
    let model = match LatticeModel::new(depth, n_max, quasimomentum) {
        Ok(m) => m,
        Err(e) => return fail(e),
    };
    let basis = match model.bloch_basis() {
        Ok(b) => b,
        Err(e) => return fail(e),
    };
    *out = Box::into_raw(Box::new(LgModel { model, basis }));
    LgStatus::LgOk
}

/// # Safety
/// `model` must be a pointer from `lg_model_new` that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lg_model_free(model: *mut LgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Basis dimension D = 2·n_max + 1.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lg_model_dim(model: *const LgModel) -> usize {
    model.as_ref().map(|m| m.model.dim()).unwrap_or(0)
}

/// Copy the Bloch band energies (recoil units, ascending) into `out`, which
/// must hold `len >= lg_model_dim(model)` values.
///
/// # Safety
/// `model` must be a live handle and `out` must point to `len` writable f64.
#[no_mangle]
pub unsafe extern "C" fn lg_band_energies(
    model: *const LgModel,
    out: *mut f64,
    len: usize,
) -> LgStatus {
    let Some(handle) = model.as_ref() else {
        set_error("model is NULL");
        return LgStatus::LgNullPointer;
    };
    if out.is_null() {
        set_error("out is NULL");
        return LgStatus::LgNullPointer;
    }
    let dim = handle.model.dim();
    if len < dim {
        set_error(&format!("buffer holds {len} values, need {dim}"));
        return LgStatus::LgInvalidArgument;
    }
    for (i, &e) in handle.basis.energies().iter().enumerate() {
        *out.add(i) = e;
    }
    LgStatus::LgOk
}

/// Load a waveform from the delimited-text format.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out` writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_read(
    path: *const c_char,
    out: *mut *mut LgWaveform,
) -> LgStatus {
    if out.is_null() {
        set_error("out is NULL");
        return LgStatus::LgNullPointer;
    }
    let path = match read_str(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match Waveform::read_file(Path::new(path)) {
        Ok(waveform) => {
            *out = Box::into_raw(Box::new(LgWaveform { waveform }));
            LgStatus::LgOk
        }
        Err(e) => fail(e),
    }
}

/// Write a waveform to the delimited-text format.
///
/// # Safety
/// `waveform` must be a live handle, `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_write(
    waveform: *const LgWaveform,
    path: *const c_char,
) -> LgStatus {
    let Some(handle) = waveform.as_ref() else {
        set_error("waveform is NULL");
        return LgStatus::LgNullPointer;
    };
    let path = match read_str(path, "path") {
        Ok(s) => s,
        Err(status) => return status,
    };
    match handle.waveform.write_file(Path::new(path)) {
        Ok(()) => LgStatus::LgOk,
        Err(e) => fail(e),
    }
}

/// # Safety
/// `waveform` must be a pointer from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_free(waveform: *mut LgWaveform) {
    if !waveform.is_null() {
        drop(Box::from_raw(waveform));
    }
}

/// Number of phase samples (N_t + 1).
///
/// # Safety
/// `waveform` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_samples(waveform: *const LgWaveform) -> usize {
    waveform.as_ref().map(|w| w.waveform.phases().len()).unwrap_or(0)
}

/// Sample spacing in 1/ω_r.
///
/// # Safety
/// `waveform` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_dt(waveform: *const LgWaveform) -> f64 {
    waveform.as_ref().map(|w| w.waveform.dt()).unwrap_or(f64::NAN)
}

/// Copy the phase samples into `out` (`len >= lg_waveform_samples`).
///
/// # Safety
/// `waveform` must be a live handle and `out` must hold `len` writable f64.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_phases(
    waveform: *const LgWaveform,
    out: *mut f64,
    len: usize,
) -> LgStatus {
    let Some(handle) = waveform.as_ref() else {
        set_error("waveform is NULL");
        return LgStatus::LgNullPointer;
    };
    if out.is_null() {
        set_error("out is NULL");
        return LgStatus::LgNullPointer;
    }
    let phases = handle.waveform.phases();
    if len < phases.len() {
        set_error(&format!("buffer holds {len} values, need {}", phases.len()));
        return LgStatus::LgInvalidArgument;
    }
    for (i, &p) in phases.iter().enumerate() {
        *out.add(i) = p;
    }
    LgStatus::LgOk
}

/// Reversed-and-negated copy of a waveform (the time-reversal map).
///
/// # Safety
/// `waveform` must be a live handle, `out` writable pointer storage.
#[no_mangle]
pub unsafe extern "C" fn lg_waveform_time_reverse(
    waveform: *const LgWaveform,
    out: *mut *mut LgWaveform,
) -> LgStatus {
    let Some(handle) = waveform.as_ref() else {
        set_error("waveform is NULL");
        return LgStatus::LgNullPointer;
    };
    if out.is_null() {
        set_error("out is NULL");
        return LgStatus::LgNullPointer;
    }
    let reversed = handle.waveform.time_reverse(true);
    *out = Box::into_raw(Box::new(LgWaveform { waveform: reversed }));
    LgStatus::LgOk
}

/// Optimize a catalog gate (name as in the CLI, e.g. "SPLIT3", "Z6",
/// "RZ4@0.785"). On success `out_waveform` holds the emitted waveform and,
/// when `out_infidelity` is non-NULL, the re-propagated infidelity is stored
/// there. Returns `LgNonConverged` (with outputs still populated) when the
/// solve missed its targets.
///
/// # Safety
/// `gate` must be NUL-terminated; `model` live; `out_waveform` writable;
/// `out_infidelity` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn lg_optimize_gate(
    model: *const LgModel,
    gate: *const c_char,
    restarts: usize,
    base_seed: u64,
    infidelity_target: f64,
    out_waveform: *mut *mut LgWaveform,
    out_infidelity: *mut f64,
) -> LgStatus {
    let Some(handle) = model.as_ref() else {
        set_error("model is NULL");
        return LgStatus::LgNullPointer;
    };
    if out_waveform.is_null() {
        set_error("out_waveform is NULL");
        return LgStatus::LgNullPointer;
    }
    let gate = match read_str(gate, "gate") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let config = RunConfig::default();
    let spec = match GateKind::parse(gate).and_then(GateSpec::from_kind) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let problem = match spec.build_problem(&handle.basis, config.penalty_weight, config.cutoff) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let mut options = config.solver.clone();
    if restarts > 0 {
        options.restarts = restarts;
    }
    options.base_seed = base_seed;
    if infidelity_target > 0.0 {
        options.infidelity_target = infidelity_target;
    }
    match solver::solve_with_waveform(&problem, &options) {
        Ok((report, waveform)) => {
            *out_waveform = Box::into_raw(Box::new(LgWaveform { waveform }));
            if !out_infidelity.is_null() {
                *out_infidelity = report.infidelity;
            }
            if report.converged {
                LgStatus::LgOk
            } else {
                set_error("solver finished without meeting its targets");
                LgStatus::LgNonConverged
            }
        }
        Err(e) => fail(e),
    }
}

/// Re-propagate a waveform against a gate target and store the measured
/// infidelity.
///
/// # Safety
/// All handles live; `gate` NUL-terminated; `out_infidelity` writable.
#[no_mangle]
pub unsafe extern "C" fn lg_verify_gate(
    model: *const LgModel,
    waveform: *const LgWaveform,
    gate: *const c_char,
    out_infidelity: *mut f64,
) -> LgStatus {
    let Some(model_handle) = model.as_ref() else {
        set_error("model is NULL");
        return LgStatus::LgNullPointer;
    };
    let Some(wave_handle) = waveform.as_ref() else {
        set_error("waveform is NULL");
        return LgStatus::LgNullPointer;
    };
    if out_infidelity.is_null() {
        set_error("out_infidelity is NULL");
        return LgStatus::LgNullPointer;
    }
    let gate = match read_str(gate, "gate") {
        Ok(s) => s,
        Err(status) => return status,
    };
    let config = RunConfig::default();
    let result = GateKind::parse(gate)
        .and_then(|kind| GateSpec::with_duration(kind, wave_handle.waveform.duration()))
        .and_then(|spec| spec.build_problem(&model_handle.basis, config.penalty_weight, config.cutoff))
        .and_then(|problem| solver::assess_waveform(&problem, &wave_handle.waveform));
    match result {
        Ok(quality) => {
            *out_infidelity = quality.infidelity;
            LgStatus::LgOk
        }
        Err(e) => fail(e),
    }
}

/// Library version string (static storage, do not free).
#[no_mangle]
pub extern "C" fn lg_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}
