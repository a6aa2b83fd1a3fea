//! C ABI over the lilypad solver.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free`. Every fallible call returns a [`LilypadStatus`]
//! and, on failure, stores a message readable through
//! [`lilypad_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;
use std::sync::Arc;

use lilypad_core::env::{sample_poisson_env, MarkedPoint, MarkedPointSet, ModelParams};
use lilypad_core::lilypad::{solve_hitting, LilypadSolution as Solution};
use lilypad_core::Error;

/// Outcome of a call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LilypadStatus {
    Ok = 0,
    InvalidParameters = 1,
    InvalidInput = 2,
    HorizonExceeded = 3,
    Accuracy = 4,
    InvalidPairing = 5,
    TooLarge = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

/// A sampled or hand-built environment.
pub struct LilypadPointSet {
    inner: Arc<MarkedPointSet>,
}

/// Hitting times of one environment up to a horizon.
pub struct LilypadSolution {
    inner: Solution,
}

/// Maximizer of `ξ(y)(t - H(y))`; `found` is 0 when no point has been hit.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct LilypadMaximizer {
    pub found: u8,
    pub index: usize,
    pub xi: f64,
    pub value: f64,
    pub near_tie_gap: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> LilypadStatus {
    match e {
        Error::InvalidParameters(_) => LilypadStatus::InvalidParameters,
        Error::InvalidInput(_) | Error::Json(_) => LilypadStatus::InvalidInput,
        Error::HorizonExceeded { .. } => LilypadStatus::HorizonExceeded,
        Error::Accuracy(_) => LilypadStatus::Accuracy,
        Error::InvalidPairing(_) => LilypadStatus::InvalidPairing,
        Error::TooLarge(_) => LilypadStatus::TooLarge,
        Error::Io(_) => LilypadStatus::Io,
    }
}

enum Fail {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> LilypadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            LilypadStatus::Ok
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LilypadStatus::NullPointer
        }
        Err(_) => {
            set_error("internal panic".into());
            LilypadStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn point<'a>(z: *const f64, d: usize, sol: &Solution) -> Result<&'a [f64], Fail> {
    if z.is_null() {
        return Err(Fail::Null("z"));
    }
    if d != sol.params().d() {
        return Err(Error::InvalidInput(format!("point has dimension {d}, solution has {}", sol.params().d())).into());
    }
    Ok(slice::from_raw_parts(z, d))
}

/// Samples the Poisson environment in `B(0, radius)` with marks at least `delta`.
///
/// # Safety
/// `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn lilypad_sample_poisson(
    d: usize,
    alpha: f64,
    radius: f64,
    delta: f64,
    seed: u64,
    out: *mut *mut LilypadPointSet,
) -> LilypadStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let params = ModelParams::new(d, alpha)?;
        let set = sample_poisson_env(&params, radius, delta, seed)?;
        *out = Box::into_raw(Box::new(LilypadPointSet { inner: Arc::new(set) }));
        Ok(())
    })
}

/// Builds an environment from `n` points: `coords` holds `n * d` values row
/// by row and `marks` holds `n` values.
///
/// # Safety
/// `coords` and `marks` must be valid for the stated lengths (they may be null
/// when `n = 0`); `out` must be valid for one pointer write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn lilypad_point_set_from_points(
    d: usize,
    alpha: f64,
    radius: f64,
    delta: f64,
    coords: *const f64,
    marks: *const f64,
    n: usize,
    out: *mut *mut LilypadPointSet,
) -> LilypadStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if n > 0 && (coords.is_null() || marks.is_null()) {
            return Err(Fail::Null("coords or marks"));
        }
        let params = ModelParams::new(d, alpha)?;
        let points = if n == 0 {
            Vec::new()
        } else {
            let c = slice::from_raw_parts(coords, n * d);
            let m = slice::from_raw_parts(marks, n);
            c.chunks(d).zip(m).map(|(p, &xi)| MarkedPoint::new(p.to_vec(), xi)).collect()
        };
        let set = MarkedPointSet::from_points(params, delta, radius, points)?;
        *out = Box::into_raw(Box::new(LilypadPointSet { inner: Arc::new(set) }));
        Ok(())
    })
}

/// Number of points; 0 for a null handle.
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lilypad_point_set_len(set: *const LilypadPointSet) -> usize {
    set.as_ref().map_or(0, |s| s.inner.len())
}

/// Releases a point set; null is ignored.
///
/// # Safety
/// `set` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lilypad_point_set_free(set: *mut LilypadPointSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Solves hitting times up to `horizon` (may be infinite) with origin speed `delta`.
///
/// The solution keeps its own reference to the point set.
///
/// # Safety
/// `set` must be a live handle and `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn lilypad_solve(
    set: *const LilypadPointSet,
    delta: f64,
    horizon: f64,
    out: *mut *mut LilypadSolution,
) -> LilypadStatus {
    guard(|| {
        let set = deref(set, "set")?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let sol = solve_hitting(Arc::clone(&set.inner), delta, horizon)?;
        *out = Box::into_raw(Box::new(LilypadSolution { inner: sol }));
        Ok(())
    })
}

/// Releases a solution; null is ignored.
///
/// # Safety
/// `sol` must be null or a live handle not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn lilypad_solution_free(sol: *mut LilypadSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// `h^δ(z)` for a point `z` of dimension `d`.
///
/// # Safety
/// `sol` must be a live handle, `z` valid for `d` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn lilypad_hitting_at(
    sol: *const LilypadSolution,
    z: *const f64,
    d: usize,
    out: *mut f64,
) -> LilypadStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.inner;
        let z = point(z, d, sol)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = sol.hitting_at(z)?;
        Ok(())
    })
}

/// `m^δ(z, t)` for a point `z` of dimension `d`.
///
/// # Safety
/// `sol` must be a live handle, `z` valid for `d` reads, `out` for one write.
#[no_mangle]
pub unsafe extern "C" fn lilypad_particles_at(
    sol: *const LilypadSolution,
    z: *const f64,
    d: usize,
    t: f64,
    out: *mut f64,
) -> LilypadStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.inner;
        let z = point(z, d, sol)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = sol.particles_at(z, t)?;
        Ok(())
    })
}

/// Maximizer at time `t`. When `pos` is non-null and a point is found, its
/// position is copied there; `pos_len` must then equal the dimension.
///
/// # Safety
/// `sol` must be a live handle, `out` valid for one write and `pos` null or
/// valid for `pos_len` writes.
#[no_mangle]
pub unsafe extern "C" fn lilypad_maximizer(
    sol: *const LilypadSolution,
    t: f64,
    out: *mut LilypadMaximizer,
    pos: *mut f64,
    pos_len: usize,
) -> LilypadStatus {
    guard(|| {
        let sol = &deref(sol, "solution")?.inner;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        if !pos.is_null() && pos_len != sol.params().d() {
            return Err(Error::InvalidInput(format!("pos_len {pos_len} differs from dimension {}", sol.params().d())).into());
        }
        let m = sol.maximizer(t)?;
        let mut r = LilypadMaximizer { value: m.value, near_tie_gap: m.near_tie_gap, ..Default::default() };
        if let (Some(p), Some(i)) = (&m.point, m.index) {
            r.found = 1;
            r.index = i;
            r.xi = p.xi;
            if !pos.is_null() {
                ptr::copy_nonoverlapping(p.pos.as_ptr(), pos, pos_len);
            }
        }
        *out = r;
        Ok(())
    })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len - 1` bytes) and returns the full message length in
/// bytes, excluding the terminator. With a null `buf` nothing is copied.
///
/// # Safety
/// `buf` must be null or valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn lilypad_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}
