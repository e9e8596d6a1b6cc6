//! C ABI over the solver.
//!
//! Objects are opaque handles created by `dmfp_*_new`-style functions and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DmfpStatus`]; the message of the last failure on the calling thread is
//! available through [`dmfp_last_error_message`]. Array results are copied
//! into caller-owned buffers whose length is passed explicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dirac_mfp::solver::{self, SolverConfig, SpaceTimeGrid};
use dirac_mfp::{fields, Error, FlowField, LinearSolver, Profile, SolveReport, TerminalDensity};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmfpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    UnsupportedParameter = 3,
    DegenerateState = 4,
    NewtonDivergence = 5,
    InvalidTarget = 6,
    Format = 7,
    Extension = 8,
    Unnormalized = 9,
    Io = 10,
    Internal = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for DmfpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidParameter(_) => DmfpStatus::InvalidParameter,
            Error::UnsupportedParameter(_) => DmfpStatus::UnsupportedParameter,
            Error::DegenerateState(_) => DmfpStatus::DegenerateState,
            Error::NewtonDivergence(_) => DmfpStatus::NewtonDivergence,
            Error::InvalidTarget(_) => DmfpStatus::InvalidTarget,
            Error::Format(_) => DmfpStatus::Format,
            Error::CrossingCharacteristics(_) => DmfpStatus::Extension,
            Error::Unnormalized(_) => DmfpStatus::Unnormalized,
            Error::Io(_) => DmfpStatus::Io,
            Error::Internal(_) => DmfpStatus::Internal,
        }
    }
}

/// Opaque self-similar profile.
pub struct DmfpProfile(Profile);

/// Opaque terminal density.
pub struct DmfpTerminal(TerminalDensity);

/// Opaque solved flow with its convergence record.
pub struct DmfpFlow {
    flow: FlowField,
    report: SolveReport,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DmfpProfileConstants {
    pub theta: f64,
    pub alpha: f64,
    pub r_alpha: f64,
    pub kappa: f64,
    /// `alpha (1 - alpha) / 2`.
    pub coef: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DmfpCompatibility {
    pub c_lower: f64,
    pub c_upper: f64,
    pub ratio_bound: f64,
    pub pass: bool,
}

/// Grid and solver settings. `linear_solver` is 0 for the banded direct
/// solver, 1 for conjugate gradients.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DmfpSolveOptions {
    pub eps: f64,
    pub t_final: f64,
    pub nt: usize,
    pub ny: usize,
    pub newton_max_iter: usize,
    pub residual_tol: f64,
    pub linear_solver: u32,
    pub strict_target: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct DmfpSolveReport {
    pub iterations: usize,
    pub scaled_residual: f64,
    pub energy_initial: f64,
    pub energy_final: f64,
    pub backtracks: usize,
    pub linear_iterations: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: DmfpStatus, msg: impl Into<String>) -> DmfpStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, recording errors and converting panics.
fn guard<F: FnOnce() -> Result<(), (DmfpStatus, String)>>(f: F) -> DmfpStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DmfpStatus::Ok,
        Ok(Err((s, m))) => fail(s, m),
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(DmfpStatus::Panic, msg)
        }
    }
}

fn lib(e: Error) -> (DmfpStatus, String) {
    (DmfpStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (DmfpStatus, String) {
    (DmfpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn out_slot<'a, T>(p: *mut *mut T, what: &str) -> Result<&'a mut *mut T, (DmfpStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    *p = ptr::null_mut();
    Ok(&mut *p)
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), (DmfpStatus, String)> {
    if dst.is_null() {
        return Err(null("output buffer"));
    }
    if len < src.len() {
        return Err((DmfpStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dmfp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns the full message length including the NUL,
/// or 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn dmfp_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dmfp_profile_new(theta: f64, out: *mut *mut DmfpProfile) -> DmfpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let p = Profile::new(theta).map_err(lib)?;
        *slot = Box::into_raw(Box::new(DmfpProfile(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from [`dmfp_profile_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmfp_profile_free(p: *mut DmfpProfile) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live profile handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dmfp_profile_constants(p: *const DmfpProfile, out: *mut DmfpProfileConstants) -> DmfpStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("profile"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let q = &p.0;
        *out = DmfpProfileConstants { theta: q.theta, alpha: q.alpha, r_alpha: q.r_alpha, kappa: q.kappa, coef: q.coef() };
        Ok(())
    })
}

/// Profile density at `y`; NaN for a null handle.
///
/// # Safety
/// `p` must be null or a live profile handle.
#[no_mangle]
pub unsafe extern "C" fn dmfp_profile_phi(p: *const DmfpProfile, y: f64) -> f64 {
    p.as_ref().map_or(f64::NAN, |p| p.0.phi(y))
}

/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn dmfp_terminal_power_bump(a: f64, b: f64, theta: f64, out: *mut *mut DmfpTerminal) -> DmfpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let m = TerminalDensity::power_bump(a, b, theta).map_err(lib)?;
        *slot = Box::into_raw(Box::new(DmfpTerminal(m)));
        Ok(())
    })
}

/// Terminal density of the self-similar flow at `t_final`.
///
/// # Safety
/// `p` must be a live profile handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dmfp_terminal_self_similar(
    p: *const DmfpProfile,
    t_final: f64,
    eps: f64,
    out: *mut *mut DmfpTerminal,
) -> DmfpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let p = p.as_ref().ok_or_else(|| null("profile"))?;
        let m = TerminalDensity::self_similar(&p.0, t_final, eps).map_err(lib)?;
        *slot = Box::into_raw(Box::new(DmfpTerminal(m)));
        Ok(())
    })
}

/// Loads a two-column `x,m` CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dmfp_terminal_load_csv(path: *const c_char, theta: f64, out: *mut *mut DmfpTerminal) -> DmfpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|e| (DmfpStatus::InvalidParameter, format!("path is not UTF-8: {e}")))?;
        let m = TerminalDensity::load_csv(path, theta).map_err(lib)?;
        *slot = Box::into_raw(Box::new(DmfpTerminal(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a terminal handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmfp_terminal_free(m: *mut DmfpTerminal) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live terminal handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dmfp_terminal_compatibility(
    m: *const DmfpTerminal,
    ratio_bound: f64,
    out: *mut DmfpCompatibility,
) -> DmfpStatus {
    guard(|| {
        let m = m.as_ref().ok_or_else(|| null("terminal"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = m.0.validate_compatibility(ratio_bound);
        *out = DmfpCompatibility { c_lower: r.c_lower, c_upper: r.c_upper, ratio_bound: r.ratio_bound, pass: r.pass };
        Ok(())
    })
}

/// Defaults: eps 1e-3, T 1, 128 x 128, banded direct solver.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dmfp_solve_options_default(out: *mut DmfpSolveOptions) -> DmfpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let s = SolverConfig::default();
        *out = DmfpSolveOptions {
            eps: 1e-3,
            t_final: 1.0,
            nt: 128,
            ny: 128,
            newton_max_iter: s.newton_max_iter,
            residual_tol: s.residual_tol,
            linear_solver: 0,
            strict_target: s.strict_target,
        };
        Ok(())
    })
}

/// Solves for the flow carrying the profile labels to `m`.
///
/// # Safety
/// Handles must be live, `opts` readable and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn dmfp_solve(
    p: *const DmfpProfile,
    m: *const DmfpTerminal,
    opts: *const DmfpSolveOptions,
    out: *mut *mut DmfpFlow,
) -> DmfpStatus {
    guard(|| {
        let slot = out_slot(out, "out")?;
        let p = p.as_ref().ok_or_else(|| null("profile"))?;
        let m = m.as_ref().ok_or_else(|| null("terminal"))?;
        let o = opts.as_ref().ok_or_else(|| null("options"))?;
        let linear_solver = match o.linear_solver {
            0 => LinearSolver::BandedDirect,
            1 => LinearSolver::ConjugateGradient,
            k => return Err((DmfpStatus::InvalidParameter, format!("unknown linear solver {k}"))),
        };
        let cfg = SolverConfig {
            newton_max_iter: o.newton_max_iter,
            residual_tol: o.residual_tol,
            linear_solver,
            strict_target: o.strict_target,
            ..SolverConfig::default()
        };
        let grid = SpaceTimeGrid::new(&p.0, o.eps, o.t_final, o.nt, o.ny).map_err(lib)?;
        let (flow, report) = solver::solve(&p.0, &m.0, &grid, &cfg).map_err(lib)?;
        *slot = Box::into_raw(Box::new(DmfpFlow { flow, report }));
        Ok(())
    })
}

/// # Safety
/// `f` must be null or a flow handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_free(f: *mut DmfpFlow) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of time and label intervals.
///
/// # Safety
/// `f` must be a live flow handle; `nt` and `ny` writable.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_dims(f: *const DmfpFlow, nt: *mut usize, ny: *mut usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        let nt = nt.as_mut().ok_or_else(|| null("nt"))?;
        let ny = ny.as_mut().ok_or_else(|| null("ny"))?;
        *nt = f.flow.nt();
        *ny = f.flow.ny();
        Ok(())
    })
}

/// # Safety
/// `f` must be a live flow handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_report(f: *const DmfpFlow, out: *mut DmfpSolveReport) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = &f.report;
        *out = DmfpSolveReport {
            iterations: r.iterations,
            scaled_residual: r.scaled_residual,
            energy_initial: r.energy_initial,
            energy_final: r.energy_final,
            backtracks: r.backtracks,
            linear_iterations: r.linear_iterations,
        };
        Ok(())
    })
}

/// Copies `gamma` row-major, `(nt + 1) * (ny + 1)` values, time-major.
///
/// # Safety
/// `f` must be a live flow handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_copy_gamma(f: *const DmfpFlow, buf: *mut f64, len: usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        copy_out(&f.flow.gamma, buf, len)
    })
}

/// Copies the `nt + 1` time nodes.
///
/// # Safety
/// `f` must be a live flow handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_copy_times(f: *const DmfpFlow, buf: *mut f64, len: usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        copy_out(&f.flow.grid.t, buf, len)
    })
}

/// Copies the `ny + 1` label nodes.
///
/// # Safety
/// `f` must be a live flow handle and `buf` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_copy_labels(f: *const DmfpFlow, buf: *mut f64, len: usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        copy_out(f.flow.grid.y(), buf, len)
    })
}

/// Density at time node `i` on the image nodes `x = gamma(t_i, y_j)`, each
/// buffer holding at least `ny + 1` values.
///
/// # Safety
/// `f` must be a live flow handle; `x` and `m` point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_density(f: *const DmfpFlow, i: usize, x: *mut f64, m: *mut f64, len: usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        if i > f.flow.nt() {
            return Err((DmfpStatus::InvalidParameter, format!("time index {i} exceeds nt = {}", f.flow.nt())));
        }
        let (xs, ms) = fields::density(&f.flow, i).map_err(lib)?;
        copy_out(&xs, x, len)?;
        copy_out(&ms, m, len)
    })
}

/// Free-boundary positions at every time node, `nt + 1` values each.
///
/// # Safety
/// `f` must be a live flow handle; `left` and `right` point to `len` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dmfp_flow_boundary(f: *const DmfpFlow, left: *mut f64, right: *mut f64, len: usize) -> DmfpStatus {
    guard(|| {
        let f = f.as_ref().ok_or_else(|| null("flow"))?;
        let b = fields::free_boundaries(&f.flow);
        copy_out(&b.gamma_l, left, len)?;
        copy_out(&b.gamma_r, right, len)
    })
}
