//! C ABI over the `qconnect` library.
//!
//! Every fallible call returns a [`QcStatus`]. On failure a message is kept
//! per thread and can be read with [`qc_last_error`]. Panels and results are
//! opaque handles that the caller releases with the matching `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use qconnect::connectedness::{ConnectednessTable, TciDenominator};
use qconnect::frequency::{frequency_connectedness, FrequencyBand, DEFAULT_GRID_SIZE};
use qconnect::panel::{clean, load_csv, log_returns, CsvSchema, ReturnPanel};
use qconnect::portfolio::mvp_weights;
use qconnect::qvar::fit_qvar;
use qconnect::Error;

/// Result code of every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    InsufficientData = 6,
    Numerical = 7,
    NotConverged = 8,
    OutOfRange = 9,
    Internal = 10,
}

/// Log returns loaded from a price file or supplied directly.
pub struct QcPanel {
    panel: ReturnPanel,
}

/// Connectedness tables for one fitted quantile: index 0 is the time-domain
/// table, followed by the short, medium and long frequency bands.
pub struct QcResult {
    tables: Vec<ConnectednessTable>,
    band_labels: Vec<CString>,
    series_labels: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> QcStatus {
    match err {
        Error::Io { .. } => QcStatus::Io,
        Error::Csv(_)
        | Error::BadDate { .. }
        | Error::BadNumber { .. }
        | Error::DuplicateDate { .. }
        | Error::UnsortedDate { .. }
        | Error::DuplicateLabel(_) => QcStatus::Parse,
        Error::EmptySeries(_) | Error::InsufficientData(_) => QcStatus::InsufficientData,
        Error::NotConverged { .. } => QcStatus::NotConverged,
        Error::RankDeficient { .. }
        | Error::ZeroVariance(_)
        | Error::Singular(_)
        | Error::Degenerate(_)
        | Error::NonFinite(_)
        | Error::Malformed(_) => QcStatus::Numerical,
        _ => QcStatus::InvalidArgument,
    }
}

struct Failure(QcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(QcStatus::NullPointer, format!("{what} is null"))
}

fn run(body: impl FnOnce() -> Result<(), Failure>) -> QcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => QcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            QcStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QcStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn table_at(result: &QcResult, band: usize) -> Result<&ConnectednessTable, Failure> {
    result.tables.get(band).ok_or_else(|| {
        Failure(
            QcStatus::OutOfRange,
            format!("band index {band} out of range 0..{}", result.tables.len()),
        )
    })
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Failure(
            QcStatus::OutOfRange,
            format!("{what} holds {len} values, {need} required"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a price CSV, drops incomplete rows and converts to log returns.
/// `date_column` may be null, in which case `"date"` is used.
///
/// # Safety
/// `path` and a non-null `date_column` must be NUL-terminated strings;
/// `out` must be a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn qc_panel_load_prices(
    path: *const c_char,
    date_column: *const c_char,
    out: *mut *mut QcPanel,
) -> QcStatus {
    run(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = PathBuf::from(str_arg(path, "path")?);
        let mut schema = CsvSchema::default();
        if !date_column.is_null() {
            schema.date_column = str_arg(date_column, "date_column")?.to_string();
        }
        let prices = clean(&load_csv(&path, &schema)?)?;
        let panel = log_returns(&prices)?;
        *out = Box::into_raw(Box::new(QcPanel { panel }));
        Ok(())
    })
}

/// Builds a panel from a row-major `n_obs x n_series` block of returns.
/// Series are labelled `S1..Sn`.
///
/// # Safety
/// `data` must point to `n_obs * n_series` readable doubles; `out` must be
/// a valid pointer to write the handle into.
#[no_mangle]
pub unsafe extern "C" fn qc_panel_from_returns(
    data: *const f64,
    n_obs: usize,
    n_series: usize,
    out: *mut *mut QcPanel,
) -> QcStatus {
    run(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_obs
            .checked_mul(n_series)
            .ok_or_else(|| Failure(QcStatus::InvalidArgument, "panel size overflows".into()))?;
        let values = DMatrix::from_row_slice(n_obs, n_series, std::slice::from_raw_parts(data, len));
        let labels = (1..=n_series).map(|i| format!("S{i}")).collect();
        let panel = ReturnPanel::from_values(labels, values)?;
        *out = Box::into_raw(Box::new(QcPanel { panel }));
        Ok(())
    })
}

/// Number of return observations, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qc_panel_n_obs(panel: *const QcPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.panel.n_obs())
}

/// Number of series, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qc_panel_n_series(panel: *const QcPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.panel.n_series())
}

/// # Safety
/// `panel` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qc_panel_free(panel: *mut QcPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Fits a quantile VAR with `lag` lags at quantile `tau` and computes the
/// time-domain table plus the default short, medium and long bands.
///
/// # Safety
/// `panel` must be a handle from this library; `out` must be a valid
/// pointer to write the result handle into.
#[no_mangle]
pub unsafe extern "C" fn qc_connectedness(
    panel: *const QcPanel,
    lag: usize,
    tau: f64,
    horizon: usize,
    out: *mut *mut QcResult,
) -> QcStatus {
    run(|| {
        let p = handle(panel, "panel")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = fit_qvar(&p.panel, lag, tau)?;
        let bands = FrequencyBand::defaults();
        let ft = frequency_connectedness(&model, horizon, &bands, DEFAULT_GRID_SIZE, TciDenominator::N)?;
        let mut tables = vec![ft.total];
        tables.extend(ft.bands);
        let cstr = |s: &str| CString::new(s.replace('\0', " ")).unwrap_or_default();
        let result = QcResult {
            band_labels: tables.iter().map(|t| cstr(&t.band)).collect(),
            series_labels: p.panel.labels.iter().map(|l| cstr(l)).collect(),
            tables,
        };
        *out = Box::into_raw(Box::new(result));
        Ok(())
    })
}

/// Number of tables in a result (time domain plus bands), or 0 for null.
///
/// # Safety
/// `result` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qc_result_band_count(result: *const QcResult) -> usize {
    result.as_ref().map_or(0, |r| r.tables.len())
}

/// Label of table `band`, or null when out of range. Owned by the result.
///
/// # Safety
/// `result` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qc_result_band_label(result: *const QcResult, band: usize) -> *const c_char {
    result
        .as_ref()
        .and_then(|r| r.band_labels.get(band))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Label of series `index`, or null when out of range. Owned by the result.
///
/// # Safety
/// `result` must be null or a handle from this library.
#[no_mangle]
pub unsafe extern "C" fn qc_result_series_label(result: *const QcResult, index: usize) -> *const c_char {
    result
        .as_ref()
        .and_then(|r| r.series_labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Total connectedness index (percent) of table `band`.
///
/// # Safety
/// `result` must be a handle from this library; `tci` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_result_tci(result: *const QcResult, band: usize, tci: *mut f64) -> QcStatus {
    run(|| {
        let t = table_at(handle(result, "result")?, band)?;
        *tci.as_mut().ok_or_else(|| null("tci"))? = t.tci;
        Ok(())
    })
}

/// Copies TO, FROM and NET (percent) of table `band` into three buffers of
/// at least `len` doubles each; `len` must cover the number of series.
///
/// # Safety
/// Each buffer must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_result_measures(
    result: *const QcResult,
    band: usize,
    to: *mut f64,
    from: *mut f64,
    net: *mut f64,
    len: usize,
) -> QcStatus {
    run(|| {
        let t = table_at(handle(result, "result")?, band)?;
        let n = t.n();
        out_slice(to, len, n, "to")?.copy_from_slice(&t.to);
        out_slice(from, len, n, "from")?.copy_from_slice(&t.from);
        out_slice(net, len, n, "net")?.copy_from_slice(&t.net);
        Ok(())
    })
}

/// Copies the normalized share matrix of table `band` in row-major order
/// into a buffer of at least `n * n` doubles.
///
/// # Safety
/// `theta` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_result_theta(
    result: *const QcResult,
    band: usize,
    theta: *mut f64,
    len: usize,
) -> QcStatus {
    run(|| {
        let t = table_at(handle(result, "result")?, band)?;
        let n = t.n();
        let buf = out_slice(theta, len, n * n, "theta")?;
        for i in 0..n {
            for j in 0..n {
                buf[i * n + j] = t.theta_tilde[(i, j)];
            }
        }
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn qc_result_free(result: *mut QcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Long-only, fully invested weights minimizing `w' M w` for a symmetric
/// row-major `n x n` matrix (a covariance, correlation or pairwise
/// connectedness matrix).
///
/// # Safety
/// `matrix` must hold `n * n` readable doubles and `weights` `n` writable
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn qc_min_weights(matrix: *const f64, n: usize, weights: *mut f64) -> QcStatus {
    run(|| {
        if matrix.is_null() {
            return Err(null("matrix"));
        }
        let out = out_slice(weights, n, n, "weights")?;
        let len = n
            .checked_mul(n)
            .ok_or_else(|| Failure(QcStatus::InvalidArgument, "matrix size overflows".into()))?;
        let m = DMatrix::from_row_slice(n, n, std::slice::from_raw_parts(matrix, len));
        let w = mvp_weights(&m)?;
        out.copy_from_slice(w.as_slice());
        Ok(())
    })
}
