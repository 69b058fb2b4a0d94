//! C ABI over the clearner estimators.
//!
//! Datasets are opaque handles created by `clearner_dataset_*` and released
//! with `clearner_dataset_free`. Every fallible call returns a
//! [`ClearnerStatus`]; on failure `clearner_last_error` describes the cause
//! for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use clearner::datagen::{gen_kang_schafer, load_csv, Dataset, KsConfig};
use clearner::estimators::{crossfit, NuisanceSpec, Recipe, RieszSpec, SplitMode};
use clearner::Error;
use nalgebra::DMatrix;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClearnerStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    Panic = 6,
}

/// Opaque dataset handle.
pub struct ClearnerDataset(Dataset);

/// Estimation options. `truncation <= 0` disables propensity clipping and
/// `folds < 2` uses a single split.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ClearnerOptions {
    pub folds: u32,
    pub truncation: f64,
    pub intercept: bool,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ClearnerEstimate {
    pub psi_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub min_pi: f64,
    /// Largest relative constraint residual, NaN for unconstrained recipes.
    pub max_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> ClearnerStatus {
    match e {
        Error::Config(_) => ClearnerStatus::Config,
        Error::Io(_) | Error::Csv(_) => ClearnerStatus::Io,
        Error::InvalidInput(_)
        | Error::MissingColumn(_)
        | Error::InvalidValue { .. }
        | Error::NoTreated(_) => ClearnerStatus::InvalidInput,
        _ => ClearnerStatus::Numerical,
    }
}

/// Runs `f`, recording errors and panics.
fn guard(f: impl FnOnce() -> Result<(), (ClearnerStatus, String)>) -> ClearnerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            ClearnerStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            ClearnerStatus::Panic
        }
    }
}

fn lift(e: Error) -> (ClearnerStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (ClearnerStatus, String) {
    (ClearnerStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (ClearnerStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (ClearnerStatus::InvalidInput, format!("`{what}` is not utf-8")))
}

unsafe fn emit(ds: Dataset, out: *mut *mut ClearnerDataset) {
    *out = Box::into_raw(Box::new(ClearnerDataset(ds)));
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn clearner_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn clearner_options_default() -> ClearnerOptions {
    ClearnerOptions {
        folds: 0,
        truncation: 0.0,
        intercept: false,
        seed: 0,
    }
}

/// Builds a dataset from row-major covariates `x` (`n * d` values),
/// treatment flags `a` (nonzero = treated) and outcomes `y`. Outcomes of
/// untreated rows are ignored and may be NaN.
///
/// # Safety
/// `x` must point to `n * d` doubles, `a` and `y` to `n` elements each, and
/// `out` to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn clearner_dataset_new(
    x: *const f64,
    n: usize,
    d: usize,
    a: *const u8,
    y: *const f64,
    out: *mut *mut ClearnerDataset,
) -> ClearnerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if x.is_null() && n * d > 0 {
            return Err(null("x"));
        }
        if a.is_null() || y.is_null() {
            return Err(null(if a.is_null() { "a" } else { "y" }));
        }
        let xs = if n * d == 0 { &[][..] } else { std::slice::from_raw_parts(x, n * d) };
        let a = std::slice::from_raw_parts(a, n).iter().map(|&v| v != 0).collect();
        let y = std::slice::from_raw_parts(y, n).to_vec();
        let ds = Dataset::new(DMatrix::from_row_slice(n, d, xs), a, y, None, None).map_err(lift)?;
        emit(ds, out);
        Ok(())
    })
}

/// Loads a dataset CSV with columns `x1..xd`, `a`, `y` and optional `pi`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clearner_dataset_load_csv(path: *const c_char, out: *mut *mut ClearnerDataset) -> ClearnerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        emit(load_csv(Path::new(path)).map_err(lift)?, out);
        Ok(())
    })
}

/// Draws a Kang-Schafer dataset with overlap scaling `c`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn clearner_dataset_simulate(
    n: usize,
    c: f64,
    misspecified: bool,
    seed: u64,
    out: *mut *mut ClearnerDataset,
) -> ClearnerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = gen_kang_schafer(&KsConfig {
            n,
            c,
            misspecified,
            flipped: false,
            seed,
        })
        .map_err(lift)?;
        emit(ds, out);
        Ok(())
    })
}

/// Number of rows, 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn clearner_dataset_rows(ds: *const ClearnerDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.n())
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn clearner_dataset_free(ds: *mut ClearnerDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Estimates the mean of the treated-arm outcome with `recipe`
/// (e.g. `"aipw"`, `"clearner_linear"`) using linear and logistic nuisances.
///
/// # Safety
/// `ds` must be a live handle, `recipe` a NUL-terminated string, `opts`
/// null (defaults) or valid, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn clearner_estimate(
    ds: *const ClearnerDataset,
    recipe: *const c_char,
    opts: *const ClearnerOptions,
    out: *mut ClearnerEstimate,
) -> ClearnerStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let recipe: Recipe = c_str(recipe, "recipe")?.parse().map_err(lift)?;
        let o = opts.as_ref().copied().unwrap_or_else(|| clearner_options_default());
        let spec = NuisanceSpec {
            intercept: o.intercept,
            truncation: (o.truncation > 0.0).then_some(o.truncation),
            ..NuisanceSpec::default()
        };
        spec.validate().map_err(lift)?;
        let split = if o.folds >= 2 {
            SplitMode::CrossFit { k: o.folds as usize }
        } else {
            SplitMode::Single
        };
        let plan = split.plan(ds.n(), o.seed).map_err(lift)?;
        let e = crossfit(ds, plan.as_ref(), recipe, &spec, &RieszSpec::MeanMissingOutcome, o.seed).map_err(lift)?;
        *out = ClearnerEstimate {
            psi_hat: e.psi_hat,
            variance: e.variance,
            ci_low: e.ci_low,
            ci_high: e.ci_high,
            min_pi: e.diagnostics.min_pi,
            max_residual: e.diagnostics.max_relative_residual().unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
