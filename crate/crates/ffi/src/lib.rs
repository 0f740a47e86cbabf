//! C ABI over the qdecay library.
//!
//! Objects are opaque handles created by `qd_*_new`-style constructors and
//! released with the matching `qd_*_free`. Every fallible call returns a
//! [`QdStatus`]; on failure the message is kept per thread and can be read
//! with [`qd_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use num_complex::Complex64;
use qdecay::decay::{decay_curve_from, fit_exponent, nonescape, DecayCurve};
use qdecay::evolve::{decompose, KGridSpec, SpectralDecomposition};
use qdecay::model::{build_initial_state, InitialState, Potential, RadialGrid, StateFamily};
use qdecay::scattering::{
    default_kappa_max, find_bound_states, jost, jost_at_zero, project_out_bound_states,
};
use qdecay::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QdStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    NotBracketed = 3,
    DegenerateState = 4,
    IncompleteBasis = 5,
    QuadratureBudget = 6,
    BoundaryContamination = 7,
    DegenerateCombination = 8,
    Config = 9,
    Io = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

impl From<&Error> for QdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Domain(_) => QdStatus::Domain,
            Error::NotBracketed { .. } => QdStatus::NotBracketed,
            Error::DegenerateState { .. } => QdStatus::DegenerateState,
            Error::IncompleteBasis { .. } => QdStatus::IncompleteBasis,
            Error::QuadratureBudget { .. } => QdStatus::QuadratureBudget,
            Error::BoundaryContamination { .. } => QdStatus::BoundaryContamination,
            Error::DegenerateCombination(_) => QdStatus::DegenerateCombination,
            Error::Config { .. } => QdStatus::Config,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => QdStatus::Io,
        }
    }
}

/// Finite-range potential.
pub struct QdPotential(Potential);

/// Initial state sampled on a radial grid.
pub struct QdState(InitialState);

/// Spectral decomposition of a state in the scattering basis.
pub struct QdDecomposition(SpectralDecomposition);

/// Power-law fit summary.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct QdFit {
    pub exponent: f64,
    pub intercept: f64,
    pub residual: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub samples: usize,
    pub unstable: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), QdFailure>) -> QdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            QdStatus::Ok
        }
        Ok(Err(QdFailure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            QdStatus::Panic
        }
    }
}

struct QdFailure(QdStatus, String);

impl From<Error> for QdFailure {
    fn from(e: Error) -> Self {
        QdFailure((&e).into(), e.to_string())
    }
}

fn null(what: &str) -> QdFailure {
    QdFailure(QdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, QdFailure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), QdFailure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), QdFailure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = value;
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], QdFailure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Library version as a NUL-terminated string with static lifetime.
#[no_mangle]
pub extern "C" fn qd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn qd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let bytes = e.borrow();
        let bytes = bytes.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// `lambda · δ(r - a)`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn qd_potential_delta_shell(
    lambda: f64,
    a: f64,
    out: *mut *mut QdPotential,
) -> QdStatus {
    guard(|| store(out, QdPotential(Potential::delta_shell(lambda, a)?)))
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qd_potential_free(p: *mut QdPotential) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Jost function `f(k)` at complex momentum `k = re + i im`.
///
/// # Safety
/// Handles and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_jost(
    potential: *const QdPotential,
    re: f64,
    im: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> QdStatus {
    guard(|| {
        let p = borrow(potential, "potential")?;
        let f = jost(&p.0, Complex64::new(re, im));
        write(out_re, f.re)?;
        write(out_im, f.im)
    })
}

/// `f(0)`; vanishes at a zero-energy resonance.
///
/// # Safety
/// Handles and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_jost_at_zero(potential: *const QdPotential, out: *mut f64) -> QdStatus {
    guard(|| {
        let p = borrow(potential, "potential")?;
        write(out, jost_at_zero(&p.0))
    })
}

/// Bound-state momenta `κ` (energy `-κ²`), ascending. `count` receives the
/// number found; `BufferTooSmall` is returned when it exceeds `capacity`.
///
/// # Safety
/// `kappa` must point to `capacity` writable values (or be null when
/// `capacity` is zero).
#[no_mangle]
pub unsafe extern "C" fn qd_bound_states(
    potential: *const QdPotential,
    kappa: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> QdStatus {
    guard(|| {
        let p = borrow(potential, "potential")?;
        let mut found: Vec<f64> = find_bound_states(&p.0, default_kappa_max(&p.0))?
            .iter()
            .map(|b| b.kappa())
            .collect();
        found.sort_by(f64::total_cmp);
        write(count, found.len())?;
        if found.len() > capacity {
            return Err(QdFailure(
                QdStatus::BufferTooSmall,
                format!("{} bound states, capacity {capacity}", found.len()),
            ));
        }
        if !found.is_empty() {
            if kappa.is_null() {
                return Err(null("kappa"));
            }
            ptr::copy_nonoverlapping(found.as_ptr(), kappa, found.len());
        }
        Ok(())
    })
}

unsafe fn new_state(
    family: StateFamily,
    r_max: f64,
    n_points: usize,
    out: *mut *mut QdState,
) -> QdStatus {
    guard(|| {
        let grid = RadialGrid::new(r_max, n_points)?;
        store(out, QdState(build_initial_state(family, grid)?))
    })
}

/// `sqrt(2/R) sin(n π r / R)` on `n_points` nodes of `[0, r_max]`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn qd_state_sine_box(
    mode: u32,
    radius: f64,
    r_max: f64,
    n_points: usize,
    out: *mut *mut QdState,
) -> QdStatus {
    new_state(StateFamily::SineBox { mode, radius }, r_max, n_points, out)
}

/// Normalized Gaussian bump supported in `[0, radius]`.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn qd_state_gaussian_bump(
    center: f64,
    width: f64,
    radius: f64,
    r_max: f64,
    n_points: usize,
    out: *mut *mut QdState,
) -> QdStatus {
    let family = StateFamily::GaussianBump {
        center,
        width,
        radius,
    };
    new_state(family, r_max, n_points, out)
}

/// New state with the bound components of `potential` removed.
///
/// # Safety
/// Handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_state_project_bound(
    state: *const QdState,
    potential: *const QdPotential,
    out: *mut *mut QdState,
) -> QdStatus {
    guard(|| {
        let s = borrow(state, "state")?;
        let p = borrow(potential, "potential")?;
        let bound = find_bound_states(&p.0, default_kappa_max(&p.0))?;
        store(out, QdState(project_out_bound_states(&s.0, &bound)?))
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qd_state_free(s: *mut QdState) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Decomposes `state` with default quadrature settings. A positive `k_max`
/// fixes the momentum cutoff; zero or negative selects it automatically.
///
/// # Safety
/// Handles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_decompose(
    state: *const QdState,
    potential: *const QdPotential,
    k_max: f64,
    out: *mut *mut QdDecomposition,
) -> QdStatus {
    guard(|| {
        let s = borrow(state, "state")?;
        let p = borrow(potential, "potential")?;
        let spec = KGridSpec {
            k_max: (k_max > 0.0).then_some(k_max),
            ..KGridSpec::default()
        };
        store(out, QdDecomposition(decompose(&s.0, &p.0, spec)?))
    })
}

/// Continuum plus bound weight; 1 for a complete basis.
///
/// # Safety
/// Handles and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_decomposition_parseval(
    decomposition: *const QdDecomposition,
    out: *mut f64,
) -> QdStatus {
    guard(|| write(out, borrow(decomposition, "decomposition")?.0.parseval()))
}

/// # Safety
/// `d` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qd_decomposition_free(d: *mut QdDecomposition) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}

/// `P(t) = ∫₀^R |Ψ(r, t)|² dr` from a single spectral propagation.
///
/// # Safety
/// Handles and output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_nonescape(
    decomposition: *const QdDecomposition,
    t: f64,
    region_radius: f64,
    out: *mut f64,
) -> QdStatus {
    guard(|| {
        let d = &borrow(decomposition, "decomposition")?.0;
        let wf = d.propagate_to(t, region_radius)?;
        write(out, nonescape(&wf, region_radius)?)
    })
}

/// Nonescape curve at `n` times with the panel-halving check. Values that
/// pass are written in order to `values`; `reliable` receives how many.
///
/// # Safety
/// `times` and `values` must each hold `n` values.
#[no_mangle]
pub unsafe extern "C" fn qd_decay_curve(
    decomposition: *const QdDecomposition,
    region_radius: f64,
    times: *const f64,
    n: usize,
    values: *mut f64,
    reliable: *mut usize,
) -> QdStatus {
    guard(|| {
        let d = &borrow(decomposition, "decomposition")?.0;
        let ts = slice(times, n, "times")?;
        let curve = decay_curve_from(d, region_radius, ts)?;
        write(reliable, curve.values.len())?;
        if !curve.values.is_empty() {
            if values.is_null() {
                return Err(null("values"));
            }
            ptr::copy_nonoverlapping(curve.values.as_ptr(), values, curve.values.len());
        }
        Ok(())
    })
}

/// Least-squares power law through `(times, values)`. A window with
/// `window_hi <= window_lo` selects the default (last 1.5 decades).
///
/// # Safety
/// `times` and `values` must each hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn qd_fit_exponent(
    times: *const f64,
    values: *const f64,
    n: usize,
    window_lo: f64,
    window_hi: f64,
    out: *mut QdFit,
) -> QdStatus {
    guard(|| {
        let ts = slice(times, n, "times")?.to_vec();
        let vs = slice(values, n, "values")?.to_vec();
        let curve = DecayCurve::from_samples(f64::NAN, ts, vs)?;
        let window = (window_hi > window_lo).then_some((window_lo, window_hi));
        let fit = fit_exponent(&curve, window)?;
        write(
            out,
            QdFit {
                exponent: fit.exponent,
                intercept: fit.intercept,
                residual: fit.residual,
                window_lo: fit.window.0,
                window_hi: fit.window.1,
                samples: fit.samples,
                unstable: fit.unstable,
            },
        )
    })
}
