//! C interface to the `ml2o` toolkit.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`Ml2oStatus`]; on failure a description is kept per thread
//! and can be fetched with [`ml2o_last_error_message`]. Arrays are passed as
//! pointer plus length, matrices row-major. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use ml2o::harness::{run_experiment, RunConfig};
use ml2o::minnorm::{solve_min_norm, GradientMatrix};
use ml2o::ml2o::{load_checkpoint, ml2o_direction, save_checkpoint, Ml2oParams, Ml2oState};
use ml2o::problems::{make_quadratic_pair, make_toy_mtl, MooProblem, ProblemRegistry};
use ml2o::record::GuardChoice;
use ml2o::rng::{stream, Purpose};
use ml2o::safeguard::guard_select;
use ml2o::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ml2oStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    Unsupported = 5,
    NotFound = 6,
    Checkpoint = 7,
    Config = 8,
    Io = 9,
    GuardViolation = 10,
    Diverged = 11,
    Panic = 12,
}

/// Which guard candidate was kept.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ml2oGuardChoice {
    Fallback = 0,
    Learned = 1,
}

/// A multi-objective problem.
pub struct Ml2oProblem(Arc<dyn MooProblem>);

/// Weights of the learned optimizer.
pub struct Ml2oParamsHandle(Ml2oParams);

/// Recurrent state of the learned optimizer for one iterate.
pub struct Ml2oLearnerState(Ml2oState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> Ml2oStatus {
    match err {
        Error::Shape { .. } => Ml2oStatus::ShapeMismatch,
        Error::InvalidArgument(_) | Error::Duplicate(_) => Ml2oStatus::InvalidArgument,
        Error::NonFinite(_) => Ml2oStatus::NonFinite,
        Error::Unsupported(_) => Ml2oStatus::Unsupported,
        Error::NotFound(_) => Ml2oStatus::NotFound,
        Error::Checkpoint { .. } => Ml2oStatus::Checkpoint,
        Error::Config(_) => Ml2oStatus::Config,
        Error::Io(_) | Error::Json(_) => Ml2oStatus::Io,
        Error::GuardViolation { .. } => Ml2oStatus::GuardViolation,
        Error::Diverged { .. } => Ml2oStatus::Diverged,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, recording any error or panic.
fn guarded(f: impl FnOnce() -> Result<(), Fail>) -> Ml2oStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => Ml2oStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            Ml2oStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            Ml2oStatus::Panic
        }
    }
}

fn non_null<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    // SAFETY: the caller promises that non-null pointers refer to live objects
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

fn non_null_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    // SAFETY: as above, and the object is not aliased for the call's duration
    unsafe { p.as_mut() }.ok_or(Fail::Null(what))
}

fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: caller guarantees `len` readable doubles at `p`
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn slice_mut<'a>(p: *mut f64, len: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    // SAFETY: caller guarantees `len` writable doubles at `p`
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Fail> {
    let s = non_null(p, what)?;
    // SAFETY: non-null and nul-terminated per the contract
    let c = unsafe { CStr::from_ptr(s) };
    let s = c
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidArgument(format!("{what} is not valid UTF-8"))))?;
    Ok(PathBuf::from(s))
}

fn check_len(what: &str, got: usize, want: usize) -> Result<(), Fail> {
    if got != want {
        return Err(Fail::Lib(Error::InvalidArgument(format!("{what} has length {got}, expected {want}"))));
    }
    Ok(())
}

fn emit<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    let slot = non_null_mut(out, "out")?;
    *slot = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copy of the calling thread's last error message, or null if there was
/// none. Release it with [`ml2o_string_free`].
#[no_mangle]
pub extern "C" fn ml2o_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn ml2o_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ml2o_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Identity-curvature quadratic pair with centers drawn from `seed`.
#[no_mangle]
pub extern "C" fn ml2o_problem_quadratic_new(
    dim: usize,
    seed: u64,
    noise_sigma: f64,
    out: *mut *mut Ml2oProblem,
) -> Ml2oStatus {
    guarded(|| emit(out, Ml2oProblem(Arc::new(make_quadratic_pair(dim, seed, noise_sigma)?))))
}

/// Two-task toy network on a synthetic dataset.
#[no_mangle]
pub extern "C" fn ml2o_problem_toy_mtl_new(
    seed: u64,
    samples: usize,
    classes: usize,
    batch: usize,
    out: *mut *mut Ml2oProblem,
) -> Ml2oStatus {
    guarded(|| emit(out, Ml2oProblem(Arc::new(make_toy_mtl(seed, samples, classes, batch)?))))
}

/// # Safety
/// `p` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml2o_problem_free(p: *mut Ml2oProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

#[no_mangle]
pub extern "C" fn ml2o_problem_shape(p: *const Ml2oProblem, dim: *mut usize, objectives: *mut usize) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(p, "problem")?;
        *non_null_mut(dim, "dim")? = p.0.dim();
        *non_null_mut(objectives, "objectives")? = p.0.objectives();
        Ok(())
    })
}

/// Writes the `m` objective values at `x` into `losses`.
#[no_mangle]
pub extern "C" fn ml2o_problem_eval(
    p: *const Ml2oProblem,
    x: *const f64,
    n: usize,
    losses: *mut f64,
    m: usize,
) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(p, "problem")?;
        check_len("losses", m, p.0.objectives())?;
        let f = p.0.eval(slice(x, n, "x")?)?;
        slice_mut(losses, m, "losses")?.copy_from_slice(&f);
        Ok(())
    })
}

/// Writes the `m x n` Jacobian at `x`, row-major, into `jac` (length `m*n`).
#[no_mangle]
pub extern "C" fn ml2o_problem_jacobian(
    p: *const Ml2oProblem,
    x: *const f64,
    n: usize,
    jac: *mut f64,
    len: usize,
) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(p, "problem")?;
        check_len("jac", len, p.0.objectives() * n)?;
        let j = p.0.full_jacobian(slice(x, n, "x")?)?;
        slice_mut(jac, len, "jac")?.copy_from_slice(j.data());
        Ok(())
    })
}

/// Min-norm point of the convex hull of the rows of `w` (`m x n`, row-major).
/// `weights` gets `m` entries, `direction` the `n`-entry descent direction.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub extern "C" fn ml2o_min_norm_solve(
    w: *const f64,
    m: usize,
    n: usize,
    tol: f64,
    max_iter: usize,
    weights: *mut f64,
    direction: *mut f64,
    converged: *mut bool,
) -> Ml2oStatus {
    guarded(|| {
        let gm = GradientMatrix::new(m, n, slice(w, m * n, "w")?.to_vec())?;
        let sol = solve_min_norm(&gm, tol, max_iter)?;
        slice_mut(weights, m, "weights")?.copy_from_slice(sol.weights.as_slice());
        slice_mut(direction, n, "direction")?.copy_from_slice(&sol.descent_direction);
        if !converged.is_null() {
            *non_null_mut(converged, "converged")? = sol.converged;
        }
        Ok(())
    })
}

/// Weights drawn from `U[-0.1, 0.1]`.
#[no_mangle]
pub extern "C" fn ml2o_params_random(
    objectives: usize,
    hidden: usize,
    seed: u64,
    out: *mut *mut Ml2oParamsHandle,
) -> Ml2oStatus {
    guarded(|| {
        let p = Ml2oParams::random(objectives, hidden, &mut stream(seed, 0, Purpose::Params))?;
        emit(out, Ml2oParamsHandle(p))
    })
}

#[no_mangle]
pub extern "C" fn ml2o_params_load(path: *const c_char, out: *mut *mut Ml2oParamsHandle) -> Ml2oStatus {
    guarded(|| {
        let path = path_arg(path, "path")?;
        emit(out, Ml2oParamsHandle(load_checkpoint(&path)?))
    })
}

#[no_mangle]
pub extern "C" fn ml2o_params_save(p: *const Ml2oParamsHandle, path: *const c_char) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(p, "params")?;
        save_checkpoint(&p.0, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `p` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml2o_params_free(p: *mut Ml2oParamsHandle) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Zero recurrent state for an `n`-coordinate iterate.
#[no_mangle]
pub extern "C" fn ml2o_state_new(
    params: *const Ml2oParamsHandle,
    n: usize,
    out: *mut *mut Ml2oLearnerState,
) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(params, "params")?;
        emit(out, Ml2oLearnerState(Ml2oState::zeros(&p.0, n)))
    })
}

/// # Safety
/// `s` must be null or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml2o_state_free(s: *mut Ml2oLearnerState) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Learned update `g` (the iterate moves by `-alpha * g`) from the gradient
/// rows `y` (`m x n`). Advances `state` only on success.
#[no_mangle]
pub extern "C" fn ml2o_learned_direction(
    params: *const Ml2oParamsHandle,
    state: *mut Ml2oLearnerState,
    y: *const f64,
    m: usize,
    n: usize,
    g: *mut f64,
) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(params, "params")?;
        let st = non_null_mut(state, "state")?;
        let gm = GradientMatrix::new(m, n, slice(y, m * n, "y")?.to_vec())?;
        let (dir, next) = ml2o_direction(&gm, &st.0, &p.0)?;
        slice_mut(g, n, "g")?.copy_from_slice(&dir);
        st.0 = next;
        Ok(())
    })
}

/// Compares the fallback and learned candidates from base point `z` on the
/// exact losses and writes the kept point into `next`.
#[allow(clippy::too_many_arguments)]
#[no_mangle]
pub extern "C" fn ml2o_guard_select(
    problem: *const Ml2oProblem,
    z: *const f64,
    fallback: *const f64,
    learned: *const f64,
    n: usize,
    next: *mut f64,
    choice: *mut Ml2oGuardChoice,
) -> Ml2oStatus {
    guarded(|| {
        let p = non_null(problem, "problem")?;
        let mut eval = |x: &[f64]| p.0.eval(x);
        let (d, pt) = guard_select(slice(z, n, "z")?, slice(fallback, n, "fallback")?, slice(learned, n, "learned")?, &mut eval)?;
        slice_mut(next, n, "next")?.copy_from_slice(&pt);
        *non_null_mut(choice, "choice")? = match d.chosen {
            GuardChoice::Fallback => Ml2oGuardChoice::Fallback,
            GuardChoice::Learned => Ml2oGuardChoice::Learned,
        };
        Ok(())
    })
}

/// Runs a JSON experiment config with the built-in problems and writes its
/// outputs into `out_dir`.
#[no_mangle]
pub extern "C" fn ml2o_run_config(config_path: *const c_char, out_dir: *const c_char) -> Ml2oStatus {
    guarded(|| {
        let cfg = RunConfig::load(&path_arg(config_path, "config_path")?)?;
        run_experiment(&cfg, &ProblemRegistry::with_builtins(), &path_arg(out_dir, "out_dir")?, None)?;
        Ok(())
    })
}
