//! C interface to the stationary solvers.
//!
//! Potentials are opaque handles created by `nls_potential_*` and released
//! with [`nls_potential_free`]. Every fallible call returns an [`NlsStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`nls_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use nlsescat::linref::rect_well_transmission;
use nlsescat::resonance::{find_resonance, split_check, Outcome, ResonanceOptions};
use nlsescat::{solve_scattering, Direction, Error, ErrorCode, IntegratorConfig, PhysicalParams, Potential, ScatterProblem, Tabulated};
use num_complex::Complex64;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NegativeRadicand = 3,
    Domain = 4,
    IntegrationFailed = 5,
    NonFiniteState = 6,
    ClosedIncoming = 7,
    DegenerateAmplitude = 8,
    NoResonance = 9,
    Io = 10,
    Panic = 99,
}

impl From<ErrorCode> for NlsStatus {
    fn from(c: ErrorCode) -> Self {
        match c {
            ErrorCode::NegativeRadicand => NlsStatus::NegativeRadicand,
            ErrorCode::Domain | ErrorCode::EmptyRange | ErrorCode::EvanescentLocal => NlsStatus::Domain,
            ErrorCode::StepLimitExceeded | ErrorCode::StepUnderflow | ErrorCode::UnstableStep | ErrorCode::NoSteadyState | ErrorCode::GridTooCoarse => {
                NlsStatus::IntegrationFailed
            }
            ErrorCode::NonFiniteState => NlsStatus::NonFiniteState,
            ErrorCode::ClosedIncomingChannel => NlsStatus::ClosedIncoming,
            ErrorCode::DegenerateAmplitude => NlsStatus::DegenerateAmplitude,
            ErrorCode::NoResonanceInBracket | ErrorCode::NotResonant => NlsStatus::NoResonance,
            ErrorCode::Invalid | ErrorCode::Parse => NlsStatus::InvalidArgument,
            ErrorCode::Io => NlsStatus::Io,
        }
    }
}

/// Direction of incidence.
pub const NLS_LEFT_TO_RIGHT: i32 = 0;
pub const NLS_RIGHT_TO_LEFT: i32 = 1;

/// Opaque potential handle.
pub struct NlsPotential(Potential);

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NlsParams {
    pub mass: f64,
    pub hbar: f64,
    pub g: f64,
    pub mu: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NlsScatterResult {
    pub transmission: f64,
    /// Upstream reflected-to-incoming ratio; zero on resonance.
    pub reflection: f64,
    pub k_in: f64,
    pub k_out: f64,
    pub amplitude_in_re: f64,
    pub amplitude_in_im: f64,
    pub phase: f64,
    pub current: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NlsResonance {
    pub mu: f64,
    pub transmission: f64,
    pub reflection: f64,
    pub evaluations: u64,
}

/// Transmissions of the full potential and its halves. Entries that failed
/// are NaN with the reason in the matching `status` slot, ordered
/// full LR, full RL, left LR, left RL, right LR, right RL.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct NlsSplitReport {
    pub cut: f64,
    pub mu: f64,
    pub transmission: [f64; 6],
    pub status: [NlsStatus; 6],
    /// `|T_R(→) − T_L(←)|`, NaN if either failed.
    pub r1: f64,
    /// `|T_L(→) − T_R(←)|`, NaN if either failed.
    pub r2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(e: Error) -> NlsStatus {
    let s = NlsStatus::from(e.code());
    set_error(e.to_string());
    s
}

fn guard(f: impl FnOnce() -> NlsStatus) -> NlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic".into());
            NlsStatus::Panic
        }
    }
}

fn null(what: &str) -> NlsStatus {
    set_error(format!("{what} is null"));
    NlsStatus::NullPointer
}

fn params(p: &NlsParams) -> Result<PhysicalParams, Error> {
    PhysicalParams::new(p.mass, p.hbar, p.g, p.mu)
}

fn direction(d: i32) -> Result<Direction, Error> {
    match d {
        NLS_LEFT_TO_RIGHT => Ok(Direction::LeftToRight),
        NLS_RIGHT_TO_LEFT => Ok(Direction::RightToLeft),
        _ => Err(Error::Invalid(format!("direction {d}"))),
    }
}

fn boxed(out: *mut *mut NlsPotential, pot: Result<Potential, Error>) -> NlsStatus {
    if out.is_null() {
        return null("out");
    }
    match pot {
        Ok(p) => {
            // SAFETY: `out` checked non-null; caller guarantees it is writable.
            unsafe { *out = Box::into_raw(Box::new(NlsPotential(p))) };
            NlsStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Message of the last failure on this thread. The pointer stays valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nls_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nls_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn nls_potential_rectangular_well(depth: f64, half_width: f64, out: *mut *mut NlsPotential) -> NlsStatus {
    guard(|| boxed(out, Potential::rectangular_well(depth, half_width)))
}

#[no_mangle]
pub extern "C" fn nls_potential_double_gaussian(height: f64, offset: f64, width: f64, out: *mut *mut NlsPotential) -> NlsStatus {
    guard(|| boxed(out, Potential::double_gaussian(height, offset, width)))
}

/// Linear interpolation through `n` samples with increasing `xs`.
///
/// # Safety
/// `xs` and `vs` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn nls_potential_tabulated(xs: *const f64, vs: *const f64, n: usize, out: *mut *mut NlsPotential) -> NlsStatus {
    guard(|| {
        if xs.is_null() || vs.is_null() {
            return null("samples");
        }
        let xs = std::slice::from_raw_parts(xs, n).to_vec();
        let vs = std::slice::from_raw_parts(vs, n).to_vec();
        boxed(out, Tabulated::new(xs, vs).map(Potential::Tabulated))
    })
}

/// Splits at `cut` into the parts left and right of it. Both outputs are new
/// handles owned by the caller.
///
/// # Safety
/// `pot` must be a live handle; `left` and `right` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nls_potential_split(pot: *const NlsPotential, cut: f64, left: *mut *mut NlsPotential, right: *mut *mut NlsPotential) -> NlsStatus {
    guard(|| {
        let Some(p) = pot.as_ref() else { return null("pot") };
        if left.is_null() || right.is_null() {
            return null("out");
        }
        if !cut.is_finite() {
            return fail(Error::Invalid("cut must be finite".into()));
        }
        let (l, r) = p.0.split(cut);
        *left = Box::into_raw(Box::new(NlsPotential(l)));
        *right = Box::into_raw(Box::new(NlsPotential(r)));
        NlsStatus::Ok
    })
}

/// `V(x)`, or NaN for a null handle.
///
/// # Safety
/// `pot` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nls_potential_eval(pot: *const NlsPotential, x: f64) -> f64 {
    pot.as_ref().map_or(f64::NAN, |p| p.0.eval(x))
}

/// # Safety
/// `pot` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nls_potential_free(pot: *mut NlsPotential) {
    if !pot.is_null() {
        drop(Box::from_raw(pot));
    }
}

/// Fixed-output scattering solve with outgoing amplitude `c`.
///
/// # Safety
/// `pot` must be a live handle; `p` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nls_solve_transmission(
    pot: *const NlsPotential,
    p: *const NlsParams,
    c_re: f64,
    c_im: f64,
    dir: i32,
    out: *mut NlsScatterResult,
) -> NlsStatus {
    guard(|| {
        let (Some(pot), Some(p)) = (pot.as_ref(), p.as_ref()) else { return null("input") };
        let Some(out) = out.as_mut() else { return null("out") };
        let r = params(p)
            .and_then(|pp| Ok((pp, direction(dir)?)))
            .and_then(|(pp, d)| ScatterProblem::new(pot.0.clone(), pp, Complex64::new(c_re, c_im), d))
            .and_then(|pr| solve_scattering(&pr, &IntegratorConfig::default()));
        match r {
            Ok(r) => {
                *out = NlsScatterResult {
                    transmission: r.transmission,
                    reflection: r.reflection,
                    k_in: r.k_in,
                    k_out: r.k_out,
                    amplitude_in_re: r.amplitude_in.re,
                    amplitude_in_im: r.amplitude_in.im,
                    phase: r.phase,
                    current: r.current,
                };
                NlsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Unit-transmission point in `[lo, hi]`; `p->mu` is ignored.
///
/// # Safety
/// `pot` must be a live handle; `p` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nls_find_resonance(
    pot: *const NlsPotential,
    p: *const NlsParams,
    lo: f64,
    hi: f64,
    c_re: f64,
    c_im: f64,
    out: *mut NlsResonance,
) -> NlsStatus {
    guard(|| {
        let (Some(pot), Some(p)) = (pot.as_ref(), p.as_ref()) else { return null("input") };
        let Some(out) = out.as_mut() else { return null("out") };
        let r = params(&NlsParams { mu: 0.5 * (lo + hi), ..*p }).and_then(|pp| {
            find_resonance(&pot.0, &pp, (lo, hi), Complex64::new(c_re, c_im), &ResonanceOptions::default(), &IntegratorConfig::default())
        });
        match r {
            Ok(r) => {
                *out = NlsResonance {
                    mu: r.mu,
                    transmission: r.transmission,
                    reflection: r.reflection,
                    evaluations: r.evaluations as u64,
                };
                NlsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Full and half-potential transmissions for one cut at `p->mu`. Individual
/// solve failures are reported per entry; the call itself fails only on bad
/// arguments.
///
/// # Safety
/// `pot` must be a live handle; `p` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nls_split_check(
    pot: *const NlsPotential,
    p: *const NlsParams,
    cut: f64,
    c_re: f64,
    c_im: f64,
    out: *mut NlsSplitReport,
) -> NlsStatus {
    guard(|| {
        let (Some(pot), Some(p)) = (pot.as_ref(), p.as_ref()) else { return null("input") };
        let Some(out) = out.as_mut() else { return null("out") };
        let pp = match params(p) {
            Ok(pp) => pp,
            Err(e) => return fail(e),
        };
        if !cut.is_finite() {
            return fail(Error::Invalid("cut must be finite".into()));
        }
        let r = split_check(&pot.0, &pp, cut, Complex64::new(c_re, c_im), &IntegratorConfig::default());
        let all: [Outcome; 6] = [r.full_lr, r.full_rl, r.left_lr, r.left_rl, r.right_lr, r.right_rl];
        *out = NlsSplitReport {
            cut: r.cut,
            mu: r.mu,
            transmission: all.map(|o| o.unwrap_or(f64::NAN)),
            status: all.map(|o| o.err().map_or(NlsStatus::Ok, NlsStatus::from)),
            r1: r.r1.unwrap_or(f64::NAN),
            r2: r.r2.unwrap_or(f64::NAN),
        };
        NlsStatus::Ok
    })
}

/// Closed-form linear transmission of a rectangular well.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nls_rect_well_transmission(energy: f64, depth: f64, half_width: f64, mass: f64, hbar: f64, out: *mut f64) -> NlsStatus {
    guard(|| {
        if out.is_null() {
            return null("out");
        }
        match rect_well_transmission(energy, depth, half_width, mass, hbar) {
            Ok(t) => {
                *out = t;
                NlsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
