//! C interface to the epicast forecasting library.
//!
//! Every function is safe to call from any thread. Handles returned by
//! `_load`/`_run` functions are owned by the caller and must be released with
//! the matching `_free` function exactly once. Functions that can fail return
//! an [`EpicastStatus`]; on failure a human-readable message is stored in
//! thread-local storage and can be read with [`epicast_last_error`].
//!
//! Forecasts produced here are bit-identical to the ones the `epicast`
//! backtest runner writes for the same corpus, model family, origin, draw
//! count, and seed.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::panic::{catch_unwind, AssertUnwindSafe};

use chrono::NaiveDate;

use epicast::config::{ModelSpec, ModelVariant, FAMILIES};
use epicast::corpus::{load_series, preprocess, training_window, ColumnMap, RegionSeries};
use epicast::corpus::DEFAULT_LOG_OFFSET;
use epicast::error::Error;
use epicast::forecast::{ForecastDraws, DEFAULT_DRAWS};
use epicast::harness::fit_and_forecast;
use epicast::samplers::{seeded_rng, ChainSpec};
use epicast::scoring;

/// Result code returned by every fallible function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpicastStatus {
    /// The call succeeded.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument failed validation (bad encoding, unknown name, bad value).
    InvalidArgument = 2,
    /// Reading the input file failed.
    IoError = 3,
    /// Model fitting or forecasting failed.
    RunFailed = 4,
    /// The caller-provided buffer is too small; the required size has been
    /// written to the length argument.
    BufferTooSmall = 5,
    /// The library panicked internally. This is a bug; the message from
    /// `epicast_last_error` should be reported.
    InternalPanic = 6,
}

/// Daily case series for one or more regions, keyed by region id.
pub struct EpicastCorpus {
    regions: BTreeMap<String, RegionSeries>,
}

/// A sample forecast: `draws x horizon` whole case counts.
pub struct EpicastForecast {
    inner: ForecastDraws,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    // Interior NULs cannot come from our own messages, but don't panic on them.
    let owned = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = owned);
}

fn status_of(err: &Error) -> EpicastStatus {
    match err {
        Error::Io(_) | Error::Csv(_) => EpicastStatus::IoError,
        Error::Data(_) | Error::Config(_) => EpicastStatus::InvalidArgument,
        Error::Sampler(_) | Error::Numeric(_) | Error::Store(_) => EpicastStatus::RunFailed,
    }
}

fn fail(err: &Error) -> EpicastStatus {
    set_error(&err.to_string());
    status_of(err)
}

fn invalid(msg: &str) -> EpicastStatus {
    set_error(msg);
    EpicastStatus::InvalidArgument
}

/// Runs `f`, converting a panic into `InternalPanic` instead of unwinding
/// across the C boundary.
fn guarded(f: impl FnOnce() -> EpicastStatus) -> EpicastStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("internal panic: {msg}"));
            EpicastStatus::InternalPanic
        }
    }
}

/// `CStr` to `&str` with the error message naming the argument.
unsafe fn utf8_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, EpicastStatus> {
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(s),
        Err(_) => Err(invalid(&format!("{name} is not valid UTF-8"))),
    }
}

fn epoch_days(date: NaiveDate) -> i64 {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    date.signed_duration_since(epoch).num_days()
}

/// Returns the library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn epicast_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Returns the message from the most recent failing call on this thread, or
/// an empty string if none has failed yet. The pointer stays valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn epicast_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a cases file (CSV with columns date, region, cases, population) and
/// returns a corpus handle in `out`. Negative counts are zeroed the same way
/// the backtest runner does it. Free with `epicast_corpus_free`.
#[no_mangle]
pub unsafe extern "C" fn epicast_corpus_load(
    path: *const c_char,
    out: *mut *mut EpicastCorpus,
) -> EpicastStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return EpicastStatus::NullPointer;
        }
        let path = match utf8_arg(path, "path") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let series = match load_series(path, &ColumnMap::default()) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let regions = series
            .iter()
            .map(|s| (s.region_id.clone(), preprocess(s)))
            .collect();
        *out = Box::into_raw(Box::new(EpicastCorpus { regions }));
        EpicastStatus::Ok
    })
}

/// Releases a corpus handle. A null handle is a no-op.
#[no_mangle]
pub unsafe extern "C" fn epicast_corpus_free(corpus: *mut EpicastCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Returns the number of regions in the corpus, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn epicast_corpus_region_count(corpus: *const EpicastCorpus) -> usize {
    if corpus.is_null() {
        return 0;
    }
    (*corpus).regions.len()
}

/// Copies the id of the region at `index` (regions are sorted by id) into
/// `buf` as a NUL-terminated string. `len` carries the buffer capacity in and
/// the required size (including the NUL) out. Call with a null `buf` to query
/// the size alone.
#[no_mangle]
pub unsafe extern "C" fn epicast_corpus_region_id(
    corpus: *const EpicastCorpus,
    index: usize,
    buf: *mut c_char,
    len: *mut usize,
) -> EpicastStatus {
    guarded(|| {
        if corpus.is_null() || len.is_null() {
            return EpicastStatus::NullPointer;
        }
        let Some(id) = (*corpus).regions.keys().nth(index) else {
            return invalid(&format!(
                "region index {index} out of range ({} regions)",
                (*corpus).regions.len()
            ));
        };
        let required = id.len() + 1;
        let cap = *len;
        *len = required;
        if buf.is_null() {
            return EpicastStatus::Ok;
        }
        if cap < required {
            set_error("region id buffer too small");
            return EpicastStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(id.as_ptr() as *const c_char, buf, id.len());
        *buf.add(id.len()) = 0;
        EpicastStatus::Ok
    })
}

/// Writes the first and last day of `region`'s series to `start` and `end`
/// as days since 1970-01-01.
#[no_mangle]
pub unsafe extern "C" fn epicast_corpus_region_range(
    corpus: *const EpicastCorpus,
    region: *const c_char,
    start: *mut i64,
    end: *mut i64,
) -> EpicastStatus {
    guarded(|| {
        if corpus.is_null() || region.is_null() || start.is_null() || end.is_null() {
            return EpicastStatus::NullPointer;
        }
        let region = match utf8_arg(region, "region") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let Some(series) = (*corpus).regions.get(region) else {
            return invalid(&format!("unknown region {region:?}"));
        };
        *start = epoch_days(series.start_date());
        *end = epoch_days(series.end_date());
        EpicastStatus::Ok
    })
}

/// Fits one model and samples a 14-day forecast.
///
/// `origin` is an ISO-8601 date with at least 56 days of history in the
/// series; `family` is one of cori, renewal-rw, sarima, trend, gp (each run
/// with its default settings); `draws` of 0 selects the default of 2000.
/// The result must be freed with `epicast_forecast_free`.
#[no_mangle]
pub unsafe extern "C" fn epicast_forecast_run(
    corpus: *const EpicastCorpus,
    region: *const c_char,
    origin: *const c_char,
    family: *const c_char,
    draws: usize,
    seed: u64,
    out: *mut *mut EpicastForecast,
) -> EpicastStatus {
    guarded(|| {
        if corpus.is_null()
            || region.is_null()
            || origin.is_null()
            || family.is_null()
            || out.is_null()
        {
            return EpicastStatus::NullPointer;
        }
        let region = match utf8_arg(region, "region") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let origin = match utf8_arg(origin, "origin") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let family = match utf8_arg(family, "family") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let Some(series) = (*corpus).regions.get(region) else {
            return invalid(&format!("unknown region {region:?}"));
        };
        let Ok(origin) = origin.parse::<NaiveDate>() else {
            return invalid(&format!("origin {origin:?} is not an ISO-8601 date"));
        };
        let Some(variant) = default_variant(family) else {
            return invalid(&format!(
                "unknown model family {family:?}; expected one of {FAMILIES:?}"
            ));
        };
        let window = match training_window(series, origin, DEFAULT_LOG_OFFSET) {
            Ok(w) => w,
            Err(e) => return fail(&e),
        };
        let n_draws = if draws == 0 { DEFAULT_DRAWS } else { draws };
        // Same stream labels as the backtest runner, so results agree with it.
        let mut rng = seeded_rng(
            seed,
            &["task", &variant.id(), region, &origin.to_string()],
        );
        let fc = match fit_and_forecast(&variant, &window, n_draws, &ChainSpec::default(), &mut rng)
        {
            Ok(fc) => fc,
            Err(e) => return fail(&e),
        };
        *out = Box::into_raw(Box::new(EpicastForecast { inner: fc }));
        EpicastStatus::Ok
    })
}

fn default_variant(family: &str) -> Option<ModelVariant> {
    // Defaults live on the serde derive; deserializing a bare family tag
    // yields the same variant the runner uses when a config lists only the
    // family name.
    let spec: ModelSpec =
        serde_json::from_value(serde_json::json!({ "family": family })).ok()?;
    spec.expand().into_iter().next()
}

/// Releases a forecast handle. A null handle is a no-op.
#[no_mangle]
pub unsafe extern "C" fn epicast_forecast_free(forecast: *mut EpicastForecast) {
    if !forecast.is_null() {
        drop(Box::from_raw(forecast));
    }
}

/// Writes the number of draws and the horizon (days) of a forecast. Either
/// output pointer may be null to skip it.
#[no_mangle]
pub unsafe extern "C" fn epicast_forecast_shape(
    forecast: *const EpicastForecast,
    n_draws: *mut usize,
    horizon: *mut usize,
) -> EpicastStatus {
    guarded(|| {
        if forecast.is_null() {
            return EpicastStatus::NullPointer;
        }
        if !n_draws.is_null() {
            *n_draws = (*forecast).inner.n_draws();
        }
        if !horizon.is_null() {
            *horizon = (*forecast).inner.horizon();
        }
        EpicastStatus::Ok
    })
}

/// Copies the forecast counts into `buf` in row-major order (draw by draw,
/// `n_draws * horizon` values). `len` carries the buffer capacity in elements
/// in and the required element count out. Call with a null `buf` to query the
/// size alone.
#[no_mangle]
pub unsafe extern "C" fn epicast_forecast_counts(
    forecast: *const EpicastForecast,
    buf: *mut f64,
    len: *mut usize,
) -> EpicastStatus {
    guarded(|| {
        if forecast.is_null() || len.is_null() {
            return EpicastStatus::NullPointer;
        }
        let draws = &(*forecast).inner.draws;
        let required = draws.len() * draws[0].len();
        let cap = *len;
        *len = required;
        if buf.is_null() {
            return EpicastStatus::Ok;
        }
        if cap < required {
            set_error("forecast count buffer too small");
            return EpicastStatus::BufferTooSmall;
        }
        let mut dst = buf;
        for row in draws {
            std::ptr::copy_nonoverlapping(row.as_ptr(), dst, row.len());
            dst = dst.add(row.len());
        }
        EpicastStatus::Ok
    })
}

/// Scores one forecast week against an observed weekly count with the sample
/// CRPS on the log incidence scale. `draws` holds `n` weekly counts (one per
/// posterior sample), `observed` the observed weekly count, `population` the
/// region population, and `log_offset` the transform offset (pass 0 for the
/// default of 0.01 per 100k).
#[no_mangle]
pub unsafe extern "C" fn epicast_crps_log(
    draws: *const f64,
    n: usize,
    observed: f64,
    population: u64,
    log_offset: f64,
    out: *mut f64,
) -> EpicastStatus {
    guarded(|| {
        if draws.is_null() || out.is_null() {
            return EpicastStatus::NullPointer;
        }
        let draws = std::slice::from_raw_parts(draws, n);
        let offset = if log_offset == 0.0 { DEFAULT_LOG_OFFSET } else { log_offset };
        match scoring::crps_log(draws, observed, population, offset) {
            Ok(v) => {
                *out = v;
                EpicastStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
