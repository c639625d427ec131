use std::ffi::{CStr, CString};
use std::fs;
use std::ptr;

use epicast_ffi::*;

fn write_corpus(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("cases.csv");
    let mut rows = String::from("date,region,cases,population\n");
    let start = chrono::NaiveDate::from_ymd_opt(2021, 1, 3).unwrap();
    for (region, pop, base) in [("n1", 5_000_000u64, 80.0f64), ("n2", 2_000_000, 40.0)] {
        for t in 0..70i64 {
            let date = start + chrono::Days::new(t as u64);
            let mut count = (base + 10.0 * (t as f64 / 5.0).sin()).round() as i64;
            // One reporting correction to exercise the cleaning path.
            if region == "n1" && t == 3 {
                count = -7;
            }
            rows.push_str(&format!("{date},{region},{count},{pop}\n"));
        }
    }
    fs::write(&path, rows).unwrap();
    path
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(epicast_last_error()).to_str().unwrap().to_string() }
}

fn load(path: &std::path::Path) -> *mut EpicastCorpus {
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let mut corpus = ptr::null_mut();
    let status = unsafe { epicast_corpus_load(c_path.as_ptr(), &mut corpus) };
    assert_eq!(status, EpicastStatus::Ok, "{}", last_error());
    assert!(!corpus.is_null());
    corpus
}

#[test]
fn version_is_a_static_string() {
    let v = unsafe { CStr::from_ptr(epicast_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn corpus_queries_work() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = load(&write_corpus(dir.path()));

    unsafe {
        assert_eq!(epicast_corpus_region_count(corpus), 2);

        // Size query first, then the copy.
        let mut len = 0usize;
        let status = epicast_corpus_region_id(corpus, 0, ptr::null_mut(), &mut len);
        assert_eq!(status, EpicastStatus::Ok);
        assert_eq!(len, 3);
        let mut buf = vec![0i8; len];
        let status = epicast_corpus_region_id(corpus, 0, buf.as_mut_ptr() as *mut _, &mut len);
        assert_eq!(status, EpicastStatus::Ok);
        assert_eq!(CStr::from_ptr(buf.as_ptr() as *const _).to_str().unwrap(), "n1");

        let mut short = 2usize;
        let mut tiny = vec![0i8; 2];
        let status = epicast_corpus_region_id(corpus, 1, tiny.as_mut_ptr() as *mut _, &mut short);
        assert_eq!(status, EpicastStatus::BufferTooSmall);
        assert_eq!(short, 3);

        let status = epicast_corpus_region_id(corpus, 5, ptr::null_mut(), &mut len);
        assert_eq!(status, EpicastStatus::InvalidArgument);
        assert!(last_error().contains("out of range"));

        let region = CString::new("n2").unwrap();
        let (mut start, mut end) = (0i64, 0i64);
        let status = epicast_corpus_region_range(corpus, region.as_ptr(), &mut start, &mut end);
        assert_eq!(status, EpicastStatus::Ok);
        // 2021-01-03 and 69 days later.
        assert_eq!(start, 18630);
        assert_eq!(end, 18630 + 69);

        epicast_corpus_free(corpus);
    }
}

#[test]
fn forecast_matches_the_library_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_corpus(dir.path());
    let corpus = load(&path);

    let region = CString::new("n1").unwrap();
    let origin = CString::new("2021-02-28").unwrap();
    let family = CString::new("cori").unwrap();

    let run = |seed: u64| -> Vec<f64> {
        let mut fc = ptr::null_mut();
        let status = unsafe {
            epicast_forecast_run(
                corpus,
                region.as_ptr(),
                origin.as_ptr(),
                family.as_ptr(),
                30,
                seed,
                &mut fc,
            )
        };
        assert_eq!(status, EpicastStatus::Ok, "{}", last_error());
        let (mut n, mut h) = (0usize, 0usize);
        unsafe {
            assert_eq!(epicast_forecast_shape(fc, &mut n, &mut h), EpicastStatus::Ok);
        }
        assert_eq!((n, h), (30, 14));
        let mut len = 0usize;
        unsafe {
            assert_eq!(
                epicast_forecast_counts(fc, ptr::null_mut(), &mut len),
                EpicastStatus::Ok
            );
        }
        assert_eq!(len, 30 * 14);
        let mut buf = vec![f64::NAN; len];
        unsafe {
            assert_eq!(
                epicast_forecast_counts(fc, buf.as_mut_ptr(), &mut len),
                EpicastStatus::Ok
            );
            epicast_forecast_free(fc);
        }
        buf
    };

    let counts = run(7);
    assert!(counts.iter().all(|&x| x.is_finite() && x >= 0.0 && x.fract() == 0.0));
    assert_eq!(counts, run(7), "same seed must reproduce the forecast");
    assert_ne!(counts, run(8), "a different seed must change the forecast");

    // The C path must agree with the library called directly, stream labels
    // included; this is the contract that makes FFI output match the runner.
    let series = epicast::corpus::load_series(&path, &epicast::corpus::ColumnMap::default())
        .unwrap()
        .into_iter()
        .find(|s| s.region_id == "n1")
        .map(|s| epicast::corpus::preprocess(&s))
        .unwrap();
    let window = epicast::corpus::training_window(
        &series,
        "2021-02-28".parse().unwrap(),
        epicast::corpus::DEFAULT_LOG_OFFSET,
    )
    .unwrap();
    let spec: epicast::config::ModelSpec =
        serde_json::from_value(serde_json::json!({ "family": "cori" })).unwrap();
    let variant = spec.expand().into_iter().next().unwrap();
    let mut rng = epicast::samplers::seeded_rng(
        7,
        &["task", &variant.id(), "n1", "2021-02-28"],
    );
    let direct = epicast::harness::fit_and_forecast(
        &variant,
        &window,
        30,
        &epicast::samplers::ChainSpec::default(),
        &mut rng,
    )
    .unwrap();
    let direct_flat: Vec<f64> = direct.draws.into_iter().flatten().collect();
    assert_eq!(counts, direct_flat);

    unsafe { epicast_corpus_free(corpus) };
}

#[test]
fn errors_are_reported_with_messages() {
    unsafe {
        let mut corpus = ptr::null_mut();
        assert_eq!(
            epicast_corpus_load(ptr::null(), &mut corpus),
            EpicastStatus::NullPointer
        );

        let missing = CString::new("/nonexistent/cases.csv").unwrap();
        assert_eq!(
            epicast_corpus_load(missing.as_ptr(), &mut corpus),
            EpicastStatus::IoError
        );
        assert!(!last_error().is_empty());

        let dir = tempfile::tempdir().unwrap();
        let corpus = load(&write_corpus(dir.path()));

        let bad_region = CString::new("zz").unwrap();
        let origin = CString::new("2021-02-28").unwrap();
        let family = CString::new("cori").unwrap();
        let mut fc = ptr::null_mut();
        let status = epicast_forecast_run(
            corpus,
            bad_region.as_ptr(),
            origin.as_ptr(),
            family.as_ptr(),
            10,
            0,
            &mut fc,
        );
        assert_eq!(status, EpicastStatus::InvalidArgument);
        assert!(last_error().contains("unknown region"));

        let region = CString::new("n1").unwrap();
        let bad_family = CString::new("arima").unwrap();
        let status = epicast_forecast_run(
            corpus,
            region.as_ptr(),
            origin.as_ptr(),
            bad_family.as_ptr(),
            10,
            0,
            &mut fc,
        );
        assert_eq!(status, EpicastStatus::InvalidArgument);
        assert!(last_error().contains("unknown model family"));

        // 2021-01-20 has only 17 days of history, 56 are required.
        let early = CString::new("2021-01-20").unwrap();
        let status = epicast_forecast_run(
            corpus,
            region.as_ptr(),
            early.as_ptr(),
            family.as_ptr(),
            10,
            0,
            &mut fc,
        );
        assert_ne!(status, EpicastStatus::Ok);
        assert!(!last_error().is_empty());

        epicast_corpus_free(corpus);
        epicast_corpus_free(ptr::null_mut());
        epicast_forecast_free(ptr::null_mut());
    }
}

#[test]
fn crps_matches_the_library() {
    let draws: Vec<f64> = (0..40).map(|i| 900.0 + 10.0 * i as f64).collect();
    let mut out = f64::NAN;
    let status = unsafe { epicast_crps_log(draws.as_ptr(), draws.len(), 1050.0, 750_000, 0.0, &mut out) };
    assert_eq!(status, EpicastStatus::Ok);
    let direct = epicast::scoring::crps_log(
        &draws,
        1050.0,
        750_000,
        epicast::corpus::DEFAULT_LOG_OFFSET,
    )
    .unwrap();
    assert_eq!(out, direct);

    // A single draw is not a distribution.
    let status = unsafe { epicast_crps_log(draws.as_ptr(), 1, 1050.0, 750_000, 0.0, &mut out) };
    assert_eq!(status, EpicastStatus::InvalidArgument);
}

#[test]
fn header_is_generated_with_the_full_surface() {
    let header = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/epicast.h")).unwrap();
    for symbol in [
        "epicast_version",
        "epicast_last_error",
        "epicast_corpus_load",
        "epicast_corpus_free",
        "epicast_corpus_region_count",
        "epicast_corpus_region_id",
        "epicast_corpus_region_range",
        "epicast_forecast_run",
        "epicast_forecast_shape",
        "epicast_forecast_counts",
        "epicast_forecast_free",
        "epicast_crps_log",
        "EPICAST_STATUS_BUFFER_TOO_SMALL",
        "typedef struct EpicastCorpus EpicastCorpus;",
    ] {
        assert!(header.contains(symbol), "header is missing {symbol}");
    }
}
