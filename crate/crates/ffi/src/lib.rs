//! C ABI over the `bsccs` solver.
//!
//! Datasets and fit results are opaque handles owned by the caller and
//! released with their `_free` function. Every fallible call returns a
//! [`BsccsStatus`]; on failure the message is available from
//! [`bsccs_last_error_message`] on the same thread until the next failing
//! call. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bsccs::longformat::{read_dataset, DrugDictionary};
use bsccs::{
    build_dataset, fit, grid_search_cv, ConvergenceMode, CvConfig, Dataset, Era, Error, FitResult,
    LaplaceParam, Precision, PriorKind, PriorSpec, SolverConfig, SubjectRecord,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsccsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    /// Overflow or an undefined Newton step.
    Numerical = 4,
    /// An internal consistency check failed.
    Internal = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
    BufferTooSmall = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsccsPrior {
    Normal = 0,
    Laplace = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsccsPrecision {
    Double = 0,
    Single = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BsccsConvergence {
    RawSum = 0,
    Normalized = 1,
}

/// Fit settings. Obtain defaults from [`bsccs_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsccsFitOptions {
    pub prior: BsccsPrior,
    /// Prior variance; the Laplace scale when `laplace_scale_param` is set.
    pub variance: f64,
    pub laplace_scale_param: bool,
    pub epsilon: f64,
    pub max_cycles: usize,
    pub convergence: BsccsConvergence,
    pub precision: BsccsPrecision,
    pub partitions: usize,
}

/// Opaque dataset handle.
pub struct BsccsDataset {
    inner: Dataset,
}

/// Opaque fit result handle.
pub struct BsccsFit {
    inner: FitResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BsccsStatus {
    match e {
        Error::Io { .. } => BsccsStatus::Io,
        Error::Overflow { .. } | Error::UndefinedStep(_) | Error::NoConvergedReplicates(_) => {
            BsccsStatus::Numerical
        }
        Error::Internal(_) => BsccsStatus::Internal,
        _ => BsccsStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (BsccsStatus, String)>) -> BsccsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BsccsStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {what}"));
            BsccsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (BsccsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (BsccsStatus, String) {
    (BsccsStatus::NullPointer, format!("`{name}` is null"))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, (BsccsStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (BsccsStatus::InvalidInput, format!("`{name}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], (BsccsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

impl BsccsFitOptions {
    fn prior(&self) -> Result<PriorSpec, Error> {
        let kind = match self.prior {
            BsccsPrior::Normal => PriorKind::Normal,
            BsccsPrior::Laplace => PriorKind::Laplace,
            BsccsPrior::None => PriorKind::None,
        };
        let param = if self.laplace_scale_param {
            LaplaceParam::Scale
        } else {
            LaplaceParam::Variance
        };
        Ok(PriorSpec::new(kind, self.variance)?.with_laplace_param(param))
    }

    fn solver(&self) -> SolverConfig {
        SolverConfig {
            epsilon: self.epsilon,
            max_cycles: self.max_cycles,
            convergence: match self.convergence {
                BsccsConvergence::RawSum => ConvergenceMode::RawSum,
                BsccsConvergence::Normalized => ConvergenceMode::Normalized,
            },
            precision: match self.precision {
                BsccsPrecision::Double => Precision::Double,
                BsccsPrecision::Single => Precision::Single,
            },
            partitions: self.partitions.max(1),
            ..SolverConfig::default()
        }
    }
}

/// Message of the last failing call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bsccs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bsccs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_options_default(out: *mut BsccsFitOptions) -> BsccsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = SolverConfig::default();
        out.write(BsccsFitOptions {
            prior: BsccsPrior::Normal,
            variance: 1.0,
            laplace_scale_param: false,
            epsilon: d.epsilon,
            max_cycles: d.max_cycles,
            convergence: BsccsConvergence::RawSum,
            precision: BsccsPrecision::Double,
            partitions: 1,
        });
        Ok(())
    })
}

/// Reads a long-format era file. `dictionary` may be null.
///
/// # Safety
/// `path` and a non-null `dictionary` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_read(
    path: *const c_char,
    dictionary: *const c_char,
    out: *mut *mut BsccsDataset,
) -> BsccsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = path_arg(path, "path")?;
        let dict = if dictionary.is_null() {
            None
        } else {
            Some(DrugDictionary::read(&path_arg(dictionary, "dictionary")?).map_err(lib)?)
        };
        let ds = read_dataset(&path, dict).map_err(lib)?;
        out.write(Box::into_raw(Box::new(BsccsDataset { inner: ds })));
        Ok(())
    })
}

/// Builds a dataset from flat arrays.
///
/// Subject `i` owns rows `subject_offsets[i] .. subject_offsets[i + 1]`;
/// row `k` has `lengths[k]` days, `events[k]` events and the drug indices
/// `exposures[exposure_offsets[k] .. exposure_offsets[k + 1]]`. Subjects
/// without events are excluded, as for file input.
///
/// # Safety
/// Every array must hold the stated number of elements; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_from_arrays(
    num_subjects: usize,
    subject_offsets: *const usize,
    num_rows: usize,
    lengths: *const i64,
    events: *const u32,
    exposure_offsets: *const usize,
    exposures: *const u32,
    num_drugs: usize,
    out: *mut *mut BsccsDataset,
) -> BsccsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let invalid = |m: String| (BsccsStatus::InvalidInput, m);
        let offsets = slice_arg(subject_offsets, num_subjects + 1, "subject_offsets")?;
        let lengths = slice_arg(lengths, num_rows, "lengths")?;
        let events = slice_arg(events, num_rows, "events")?;
        let exp_offsets = slice_arg(exposure_offsets, num_rows + 1, "exposure_offsets")?;
        if offsets[0] != 0 || offsets[num_subjects] != num_rows || offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("subject_offsets must rise from 0 to num_rows".into()));
        }
        if exp_offsets[0] != 0 || exp_offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(invalid("exposure_offsets must start at 0 and never decrease".into()));
        }
        let exposures = slice_arg(exposures, exp_offsets[num_rows], "exposures")?;
        let records: Vec<SubjectRecord> = (0..num_subjects)
            .map(|i| {
                let eras = (offsets[i]..offsets[i + 1])
                    .map(|k| {
                        let drugs = exposures[exp_offsets[k]..exp_offsets[k + 1]].to_vec();
                        Era::new(lengths[k], events[k], drugs)
                    })
                    .collect();
                SubjectRecord::new(i.to_string(), eras)
            })
            .collect();
        let ds = build_dataset(&records, num_drugs).map_err(lib)?;
        out.write(Box::into_raw(Box::new(BsccsDataset { inner: ds })));
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_free(ds: *mut BsccsDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of subjects kept, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_num_subjects(ds: *const BsccsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_subjects())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_num_drugs(ds: *const BsccsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_drugs())
}

/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn bsccs_dataset_num_rows(ds: *const BsccsDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.num_rows())
}

/// Fits the MAP estimate. `init_beta` may be null (zeros); otherwise it holds
/// one value per drug.
///
/// # Safety
/// `ds` and `options` must be live; a non-null `init_beta` must hold
/// `bsccs_dataset_num_drugs(ds)` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit(
    ds: *const BsccsDataset,
    options: *const BsccsFitOptions,
    init_beta: *const f64,
    out: *mut *mut BsccsFit,
) -> BsccsStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        let options = options.as_ref().ok_or_else(|| null("options"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let init = if init_beta.is_null() {
            None
        } else {
            Some(std::slice::from_raw_parts(init_beta, ds.num_drugs()))
        };
        let r = fit(ds, &options.prior().map_err(lib)?, &options.solver(), init).map_err(lib)?;
        out.write(Box::into_raw(Box::new(BsccsFit { inner: r })));
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_free(fit: *mut BsccsFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Copies the coefficients into `out`, which holds `len` values. On
/// `BufferTooSmall` nothing is written; the required length is
/// `bsccs_fit_num_coefficients(fit)`.
///
/// # Safety
/// `fit` must be live; `out` must hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_coefficients(fit: *const BsccsFit, out: *mut f64, len: usize) -> BsccsStatus {
    guard(|| {
        let beta = &fit.as_ref().ok_or_else(|| null("fit"))?.inner.beta;
        if len < beta.len() {
            return Err((
                BsccsStatus::BufferTooSmall,
                format!("buffer holds {len} values, {} needed", beta.len()),
            ));
        }
        if !beta.is_empty() {
            if out.is_null() {
                return Err(null("out"));
            }
            ptr::copy_nonoverlapping(beta.as_ptr(), out, beta.len());
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_num_coefficients(fit: *const BsccsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.beta.len())
}

/// Maximized log posterior; NaN for a null handle.
///
/// # Safety
/// `fit` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_log_posterior(fit: *const BsccsFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.inner.log_posterior)
}

/// # Safety
/// `fit` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_cycles(fit: *const BsccsFit) -> usize {
    fit.as_ref().map_or(0, |f| f.inner.cycles_run)
}

/// # Safety
/// `fit` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn bsccs_fit_converged(fit: *const BsccsFit) -> bool {
    fit.as_ref().is_some_and(|f| f.inner.converged)
}

/// Selects a prior variance by k-fold cross-validation over `grid` (strictly
/// ascending, `grid_len` values). The prior kind and solver settings come from
/// `options`; its variance is ignored.
///
/// # Safety
/// `ds` and `options` must be live; `grid` must hold `grid_len` values;
/// `out_variance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bsccs_cv_select(
    ds: *const BsccsDataset,
    options: *const BsccsFitOptions,
    k: usize,
    grid: *const f64,
    grid_len: usize,
    seed: u64,
    out_variance: *mut f64,
) -> BsccsStatus {
    guard(|| {
        let ds = &ds.as_ref().ok_or_else(|| null("ds"))?.inner;
        let options = options.as_ref().ok_or_else(|| null("options"))?;
        if out_variance.is_null() {
            return Err(null("out_variance"));
        }
        let prior = options.prior().map_err(lib)?;
        let cfg = CvConfig {
            k,
            grid: slice_arg(grid, grid_len, "grid")?.to_vec(),
            seed,
            solver: options.solver(),
            prior_kind: prior.kind,
            laplace_param: prior.laplace_param,
            warm_start: true,
        };
        out_variance.write(grid_search_cv(ds, &cfg).map_err(lib)?.selected_variance);
        Ok(())
    })
}
