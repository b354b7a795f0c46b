//! C ABI for `subgrad-sysid`.
//!
//! Objects are opaque handles created by `ssid_*_new`/`ssid_*_generate`
//! style functions and released with the matching `ssid_*_free`. Matrices
//! cross the boundary as row-major `double` arrays of length `n * n`.
//! Every fallible function returns an [`SsidStatus`]; on failure
//! [`ssid_last_error`] describes the problem.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nalgebra::{DMatrix, DVector};
use subgrad_sysid::baseline::lse_fit;
use subgrad_sysid::objective::SubgradientSelection;
use subgrad_sysid::sim::{
    default_initial_state, generate_system, simulate, DisturbanceModel, SystemInstance, Trajectory,
};
use subgrad_sysid::solver::{run_simulation, EstimatorState, InitRule, OnlineEstimator, RunConfig, StepRecord};
use subgrad_sysid::stepsize::{BacktrackingParams, StepSizePolicy};
use subgrad_sysid::theory::{burn_in_estimate, gamma_rate, TheoryParams};
use subgrad_sysid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Stationary = 4,
    MissingOracle = 5,
    HorizonExceeded = 6,
    Parse = 7,
    Io = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsidPolicyKind {
    Best = 0,
    Polyak = 1,
    Constant = 2,
    Diminishing = 3,
    Backtracking = 4,
}

/// `value` is `β` for constant steps and `β₀` for diminishing steps; it is
/// ignored otherwise.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsidPolicy {
    pub kind: SsidPolicyKind,
    pub value: f64,
}

/// One period of the estimator. Gap fields are NaN without a known system.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SsidStepRecord {
    pub period: u64,
    pub sol_gap: f64,
    pub loss_gap: f64,
    pub beta: f64,
    pub grad_norm: f64,
    pub cos_theta: f64,
    /// Bit set: 1 stationary, 2 negative Polyak gap, 4 no descent, 8 negative
    /// step.
    pub flags: u32,
}

pub struct SsidSystem(SystemInstance);
pub struct SsidTrajectory(Trajectory);
pub struct SsidEstimator(OnlineEstimator);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> SsidStatus {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) | Error::UndefinedAngle => SsidStatus::InvalidArgument,
        Error::DimensionMismatch { .. } => SsidStatus::DimensionMismatch,
        Error::Stationary => SsidStatus::Stationary,
        Error::MissingOracle(_) => SsidStatus::MissingOracle,
        Error::HorizonExceeded { .. } => SsidStatus::HorizonExceeded,
        Error::Parse { .. } => SsidStatus::Parse,
        Error::Io { .. } => SsidStatus::Io,
    }
}

struct Fail(SsidStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(SsidStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SsidStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsidStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            SsidStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: the caller passes a handle obtained from this library.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    // SAFETY: as above, and the handle is not shared across threads.
    unsafe { p.as_mut() }.ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: the caller guarantees `len` readable doubles.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn write_out<T>(p: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null and writable per the caller contract.
    unsafe { p.write(value) };
    Ok(())
}

unsafe fn copy_matrix(a: &DMatrix<f64>, out: *mut f64, len: usize) -> Result<(), Fail> {
    let n = a.nrows();
    if len < n * n {
        return Err(Fail(
            SsidStatus::DimensionMismatch,
            format!("buffer holds {len} values, need {}", n * n),
        ));
    }
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: `out` has room for `len >= n*n` doubles.
    let dst = unsafe { std::slice::from_raw_parts_mut(out, n * n) };
    for i in 0..n {
        for j in 0..n {
            dst[i * n + j] = a[(i, j)];
        }
    }
    Ok(())
}

unsafe fn read_matrix(data: *const f64, n: usize) -> Result<DMatrix<f64>, Fail> {
    let values = unsafe { slice(data, n * n, "matrix")? };
    Ok(DMatrix::from_row_slice(n, n, values))
}

fn policy_of(p: SsidPolicy) -> StepSizePolicy {
    match p.kind {
        SsidPolicyKind::Best => StepSizePolicy::Best,
        SsidPolicyKind::Polyak => StepSizePolicy::Polyak,
        SsidPolicyKind::Constant => StepSizePolicy::Constant { beta: p.value },
        SsidPolicyKind::Diminishing => StepSizePolicy::Diminishing { beta0: p.value },
        SsidPolicyKind::Backtracking => StepSizePolicy::Backtracking(BacktrackingParams::default()),
    }
}

fn record_of(r: &StepRecord) -> SsidStepRecord {
    SsidStepRecord {
        period: r.period as u64,
        sol_gap: r.sol_gap,
        loss_gap: r.loss_gap,
        beta: r.beta,
        grad_norm: r.grad_norm,
        cos_theta: r.cos_theta,
        flags: u32::from(r.flags.bits()),
    }
}

/// Boxes `value` into `*out`, checking `out` first so nothing leaks.
unsafe fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    // SAFETY: non-null and writable per the caller contract.
    unsafe { out.write(Box::into_raw(Box::new(value))) };
    Ok(())
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        // SAFETY: `p` came from `emit` and is freed once.
        drop(unsafe { Box::from_raw(p) });
    }
}

/// Message for the last failed call on this thread. Valid until the next
/// failing call on the same thread; never null.
#[no_mangle]
pub extern "C" fn ssid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Draws a stable `n × n` system.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_generate(n: usize, seed: u64, out: *mut *mut SsidSystem) -> SsidStatus {
    guard(|| {
        let sys = generate_system(n, seed)?;
        unsafe { emit(out, SsidSystem(sys)) }
    })
}

/// Wraps a row-major `n × n` matrix with spectral norm below one.
///
/// # Safety
/// `data` must hold `n * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_from_matrix(data: *const f64, n: usize, out: *mut *mut SsidSystem) -> SsidStatus {
    guard(|| {
        let a = unsafe { read_matrix(data, n)? };
        let sys = SystemInstance::from_matrix(a)?;
        unsafe { emit(out, SsidSystem(sys)) }
    })
}

/// Dimension, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_dim(sys: *const SsidSystem) -> usize {
    unsafe { sys.as_ref() }.map_or(0, |s| s.0.n())
}

/// Spectral norm, or NaN for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_rho(sys: *const SsidSystem) -> f64 {
    unsafe { sys.as_ref() }.map_or(f64::NAN, |s| s.0.rho())
}

/// Copies the matrix, row-major, into `out[0..n*n]`.
///
/// # Safety
/// `sys` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_matrix(sys: *const SsidSystem, out: *mut f64, len: usize) -> SsidStatus {
    guard(|| {
        let sys = unsafe { as_ref(sys, "system")? };
        unsafe { copy_matrix(sys.0.a_true(), out, len) }
    })
}

/// # Safety
/// `sys` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssid_system_free(sys: *mut SsidSystem) {
    unsafe { free(sys) }
}

/// Simulates `horizon` transitions with Gaussian disturbance lengths of
/// scale `1/√n`. `x0` may be null for the zero state.
///
/// # Safety
/// `sys` must be live, `x0` null or `n` doubles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_simulate(
    sys: *const SsidSystem,
    p: f64,
    seed: u64,
    horizon: usize,
    x0: *const f64,
    out: *mut *mut SsidTrajectory,
) -> SsidStatus {
    guard(|| {
        let sys = unsafe { as_ref(sys, "system")? };
        let n = sys.0.n();
        let x0 = if x0.is_null() {
            default_initial_state(n)
        } else {
            DVector::from_column_slice(unsafe { slice(x0, n, "x0")? })
        };
        let model = DisturbanceModel::for_dimension(n, p, seed)?;
        let traj = simulate(&sys.0, &model, &x0, horizon)?;
        unsafe { emit(out, SsidTrajectory(traj)) }
    })
}

/// Number of transitions, or 0 for a null handle.
///
/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_horizon(traj: *const SsidTrajectory) -> usize {
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.horizon())
}

/// # Safety
/// `traj` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_dim(traj: *const SsidTrajectory) -> usize {
    unsafe { traj.as_ref() }.map_or(0, |t| t.0.dim())
}

/// Copies `x_t` into `out[0..n]`.
///
/// # Safety
/// `traj` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_state(
    traj: *const SsidTrajectory,
    t: usize,
    out: *mut f64,
    len: usize,
) -> SsidStatus {
    guard(|| {
        let traj = unsafe { as_ref(traj, "trajectory")? };
        if t > traj.0.horizon() {
            return Err(Error::HorizonExceeded {
                requested: t,
                available: traj.0.horizon(),
            }
            .into());
        }
        let x = traj.0.state(t);
        if len < x.len() || out.is_null() {
            return Err(Fail(
                SsidStatus::DimensionMismatch,
                "state buffer too small or null".into(),
            ));
        }
        // SAFETY: `out` holds at least `x.len()` doubles.
        unsafe { std::slice::from_raw_parts_mut(out, x.len()) }.copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// Whether the disturbance at `t` is nonzero.
///
/// # Safety
/// `traj` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_is_attacked(
    traj: *const SsidTrajectory,
    t: usize,
    out: *mut bool,
) -> SsidStatus {
    guard(|| {
        let traj = unsafe { as_ref(traj, "trajectory")? };
        if t >= traj.0.horizon() {
            return Err(Error::HorizonExceeded {
                requested: t,
                available: traj.0.horizon(),
            }
            .into());
        }
        unsafe { write_out(out, traj.0.is_attacked(t), "out") }
    })
}

/// Writes the trajectory CSV to a UTF-8 path.
///
/// # Safety
/// `traj` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_write_csv(traj: *const SsidTrajectory, path: *const c_char) -> SsidStatus {
    guard(|| {
        let traj = unsafe { as_ref(traj, "trajectory")? };
        if path.is_null() {
            return Err(null("path"));
        }
        // SAFETY: NUL-terminated per contract.
        let path = unsafe { CStr::from_ptr(path) }
            .to_str()
            .map_err(|_| Fail(SsidStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let file = std::fs::File::create(path).map_err(|e| Fail(SsidStatus::Io, format!("{path}: {e}")))?;
        let mut w = std::io::BufWriter::new(file);
        traj.0
            .write_csv(&mut w)
            .and_then(|_| std::io::Write::flush(&mut w))
            .map_err(|e| Fail(SsidStatus::Io, format!("{path}: {e}")))
    })
}

/// # Safety
/// `traj` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssid_trajectory_free(traj: *mut SsidTrajectory) {
    unsafe { free(traj) }
}

/// Streaming estimator starting at `Â^(1) = 0` with first state `x0`.
///
/// # Safety
/// `x0` must hold `n` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_new(
    n: usize,
    x0: *const f64,
    policy: SsidPolicy,
    out: *mut *mut SsidEstimator,
) -> SsidStatus {
    guard(|| {
        let x0 = DVector::from_column_slice(unsafe { slice(x0, n, "x0")? });
        let state = EstimatorState::init(n, InitRule::Zeros, 0)?;
        let est = OnlineEstimator::new(&x0, state, policy_of(policy), SubgradientSelection::default())?;
        unsafe { emit(out, SsidEstimator(est)) }
    })
}

/// Supplies the true matrix (row-major), enabling gap metrics and the best
/// and Polyak steps.
///
/// # Safety
/// `est` must be live and `a_true` must hold `n * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_set_truth(est: *mut SsidEstimator, a_true: *const f64) -> SsidStatus {
    guard(|| {
        let est = unsafe { as_mut(est, "estimator")? };
        let n = est.0.estimate().nrows();
        let a = unsafe { read_matrix(a_true, n)? };
        est.0.set_truth(a)?;
        Ok(())
    })
}

/// Optimal-value estimate used by Polyak steps when the truth is unknown.
///
/// # Safety
/// `est` must be live.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_set_f_star(est: *mut SsidEstimator, f_star: f64) -> SsidStatus {
    guard(|| {
        let est = unsafe { as_mut(est, "estimator")? };
        est.0.set_f_star(Some(f_star));
        Ok(())
    })
}

/// Appends the next state.
///
/// # Safety
/// `est` must be live and `x` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_observe(est: *mut SsidEstimator, x: *const f64) -> SsidStatus {
    guard(|| {
        let est = unsafe { as_mut(est, "estimator")? };
        let n = est.0.estimate().nrows();
        let x = DVector::from_column_slice(unsafe { slice(x, n, "x")? });
        est.0.observe(&x)?;
        Ok(())
    })
}

/// Takes one update. `record` may be null.
///
/// # Safety
/// `est` must be live; `record` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_step(est: *mut SsidEstimator, record: *mut SsidStepRecord) -> SsidStatus {
    guard(|| {
        let est = unsafe { as_mut(est, "estimator")? };
        let rec = est.0.step()?;
        if !record.is_null() {
            unsafe { write_out(record, record_of(&rec), "record")? };
        }
        Ok(())
    })
}

/// Copies the current estimate, row-major.
///
/// # Safety
/// `est` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_matrix(est: *const SsidEstimator, out: *mut f64, len: usize) -> SsidStatus {
    guard(|| {
        let est = unsafe { as_ref(est, "estimator")? };
        unsafe { copy_matrix(est.0.estimate(), out, len) }
    })
}

/// Current period `T`, or 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_period(est: *const SsidEstimator) -> u64 {
    unsafe { est.as_ref() }.map_or(0, |e| e.0.state().period as u64)
}

/// # Safety
/// `est` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssid_estimator_free(est: *mut SsidEstimator) {
    unsafe { free(est) }
}

/// Runs periods `1..horizon` on a simulated trajectory and reports the
/// final solution gap. `estimate` may be null; otherwise it receives the
/// final matrix.
///
/// # Safety
/// Handles must be live; `final_gap` writable; `estimate` null or `len`
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_identify(
    sys: *const SsidSystem,
    traj: *const SsidTrajectory,
    policy: SsidPolicy,
    horizon: usize,
    final_gap: *mut f64,
    estimate: *mut f64,
    len: usize,
) -> SsidStatus {
    guard(|| {
        let sys = unsafe { as_ref(sys, "system")? };
        let traj = unsafe { as_ref(traj, "trajectory")? };
        let out = run_simulation(&sys.0, &traj.0, &RunConfig::new(policy_of(policy), horizon))?;
        unsafe { write_out(final_gap, out.metrics.final_sol_gap, "final_gap")? };
        if !estimate.is_null() {
            unsafe { copy_matrix(&out.state.a_hat, estimate, len)? };
        }
        Ok(())
    })
}

/// Burn-in estimate for a given `κ`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_burn_in_estimate(
    kappa: f64,
    p: f64,
    rho: f64,
    n: usize,
    delta: f64,
    c_burn: f64,
    out: *mut u64,
) -> SsidStatus {
    guard(|| {
        let params = TheoryParams {
            p,
            rho,
            sigma: kappa,
            lambda: 1.0,
            delta,
            c_burn,
        };
        params.validate()?;
        unsafe { write_out(out, burn_in_estimate(&params, n), "out") }
    })
}

/// Contraction rate `γ` for a given `κ`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssid_gamma_rate(kappa: f64, p: f64, rho: f64, c_gamma: f64, out: *mut f64) -> SsidStatus {
    guard(|| {
        let params = TheoryParams {
            p,
            rho,
            sigma: kappa,
            lambda: 1.0,
            delta: 0.05,
            c_burn: 1.0,
        };
        params.validate()?;
        let gamma = gamma_rate(&params, c_gamma)?;
        unsafe { write_out(out, gamma, "out") }
    })
}

/// Least-squares fit on the first `periods` transitions, row-major.
///
/// # Safety
/// `traj` must be live and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ssid_lse_fit(
    traj: *const SsidTrajectory,
    periods: usize,
    ridge: f64,
    out: *mut f64,
    len: usize,
) -> SsidStatus {
    guard(|| {
        let traj = unsafe { as_ref(traj, "trajectory")? };
        let fit = lse_fit(&traj.0, periods, ridge)?;
        unsafe { copy_matrix(&fit.a_lse, out, len) }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn errors_map_to_statuses() {
        assert_eq!(status_of(&Error::Stationary), SsidStatus::Stationary);
        assert_eq!(status_of(&Error::MissingOracle("best")), SsidStatus::MissingOracle);
        assert_eq!(
            status_of(&Error::DimensionMismatch { expected: 2, found: 3 }),
            SsidStatus::DimensionMismatch
        );
        assert_eq!(status_of(&Error::Config("x".into())), SsidStatus::InvalidArgument);
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, SsidStatus::Panic);
        let msg = LAST_ERROR.with(|e| e.borrow().to_str().unwrap().to_owned());
        assert_eq!(msg, "internal panic");
    }

    #[test]
    fn emit_rejects_null_out() {
        let res = unsafe { emit(ptr::null_mut::<*mut u8>(), 7u8) };
        assert!(matches!(res, Err(Fail(SsidStatus::NullPointer, _))));
        let mut slot: *mut u8 = ptr::null_mut();
        unsafe { emit(&mut slot, 7u8).ok().unwrap() };
        assert_eq!(unsafe { *slot }, 7);
        unsafe { free(slot) };
    }

    #[test]
    fn matrices_are_row_major() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mut buf = [0.0; 4];
        unsafe { copy_matrix(&a, buf.as_mut_ptr(), 4).ok().unwrap() };
        assert_eq!(buf, [1.0, 2.0, 3.0, 4.0]);
        let back = unsafe { read_matrix(buf.as_ptr(), 2).ok().unwrap() };
        assert_eq!(back, a);
    }
}
