//! Case-count corpus: loading, cleaning, and windowing of daily incidence
//! series.
//!
//! A corpus is a set of per-region daily case counts on a gapless date grid.
//! Models never see the corpus directly; they are fit on a [`TrainingWindow`]
//! extracted at a forecast origin.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days of history required before a forecast origin (origin day included
/// makes a window of `TRAIN_DAYS + 1` values).
pub const TRAIN_DAYS: usize = 56;
/// Values in a training window: the origin day plus the 56 days before it.
pub const WINDOW_LEN: usize = TRAIN_DAYS + 1;
/// Forecast horizon in days.
pub const HORIZON: usize = 14;
/// Offset added before taking logs of incidence, so zero counts stay finite.
pub const DEFAULT_LOG_OFFSET: f64 = 0.01;
/// Incidence is expressed per 100k population throughout.
pub const PER_100K: f64 = 100_000.0;

/// Daily case counts for one region on a gapless daily grid.
///
/// Raw counts may be negative (reporting corrections); [`preprocess`] removes
/// them. Incidence is always `cases * 1e5 / population`, recomputed whenever
/// cases change.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSeries {
    pub region_id: String,
    start: NaiveDate,
    pub cases: Vec<i64>,
    pub population: u64,
    pub incidence: Vec<f64>,
}

impl RegionSeries {
    pub fn new(
        region_id: impl Into<String>,
        start: NaiveDate,
        cases: Vec<i64>,
        population: u64,
    ) -> Result<Self> {
        if population == 0 {
            return Err(Error::data("population must be positive"));
        }
        if cases.is_empty() {
            return Err(Error::data("series must contain at least one day"));
        }
        let incidence = cases
            .iter()
            .map(|&c| c as f64 * PER_100K / population as f64)
            .collect();
        Ok(RegionSeries {
            region_id: region_id.into(),
            start,
            cases,
            population,
            incidence,
        })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date(self.len() - 1)
    }

    pub fn date(&self, idx: usize) -> NaiveDate {
        self.start + Days::new(idx as u64)
    }

    /// Index of `date` in the grid, if the series covers it.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = date.signed_duration_since(self.start).num_days();
        if off < 0 || off as usize >= self.len() {
            None
        } else {
            Some(off as usize)
        }
    }

    /// Trailing 7-day case total ending at `idx` (inclusive).
    /// Requires `idx >= 6`.
    pub fn weekly_cases(&self, idx: usize) -> Option<i64> {
        if idx < 6 || idx >= self.len() {
            return None;
        }
        Some(self.cases[idx - 6..=idx].iter().sum())
    }

    /// Trailing 7-day incidence per 100k ending at `idx` (inclusive).
    pub fn weekly_incidence(&self, idx: usize) -> Option<f64> {
        self.weekly_cases(idx)
            .map(|c| c as f64 * PER_100K / self.population as f64)
    }
}

/// Column names expected in a cases file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ColumnMap {
    pub date: String,
    pub region: String,
    pub cases: String,
    pub population: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            date: "date".into(),
            region: "region".into(),
            cases: "cases".into(),
            population: "population".into(),
        }
    }
}

/// Loads per-region daily series from a delimited text file.
///
/// Rows may arrive in any order; they are grouped by region and sorted by
/// date. Errors on duplicate (region, date) pairs, gaps in the date grid,
/// non-positive population, or a population that varies within a region.
/// Negative case counts are accepted here and handled by [`preprocess`].
pub fn load_series(path: impl AsRef<Path>, columns: &ColumnMap) -> Result<Vec<RegionSeries>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::data(format!("missing column '{name}'")))
    };
    let (ci_date, ci_region, ci_cases, ci_pop) = (
        col(&columns.date)?,
        col(&columns.region)?,
        col(&columns.cases)?,
        col(&columns.population)?,
    );

    let mut by_region: BTreeMap<String, BTreeMap<NaiveDate, (i64, u64)>> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize| -> Result<&str> {
            record
                .get(idx)
                .ok_or_else(|| Error::data(format!("row {}: short record", line + 2)))
        };
        let date = NaiveDate::parse_from_str(field(ci_date)?, "%Y-%m-%d")
            .map_err(|e| Error::data(format!("row {}: bad date: {e}", line + 2)))?;
        let region = field(ci_region)?.to_string();
        let cases: i64 = field(ci_cases)?
            .trim()
            .parse()
            .map_err(|e| Error::data(format!("row {}: bad case count: {e}", line + 2)))?;
        let population: u64 = field(ci_pop)?
            .trim()
            .parse()
            .map_err(|e| Error::data(format!("row {}: bad population: {e}", line + 2)))?;
        if population == 0 {
            return Err(Error::data(format!(
                "region {region}: population must be positive"
            )));
        }
        let days = by_region.entry(region.clone()).or_default();
        if days.insert(date, (cases, population)).is_some() {
            return Err(Error::data(format!(
                "region {region}: duplicate entry for {date}"
            )));
        }
    }

    let mut out = Vec::new();
    for (region, days) in by_region {
        let (&start, &(_, population)) = days.iter().next().expect("non-empty by construction");
        let mut cases = Vec::with_capacity(days.len());
        for (i, (&date, &(count, pop))) in days.iter().enumerate() {
            let expected = start + Days::new(i as u64);
            if date != expected {
                return Err(Error::data(format!(
                    "region {region}: missing day {expected}"
                )));
            }
            if pop != population {
                return Err(Error::data(format!(
                    "region {region}: population changes on {date}"
                )));
            }
            cases.push(count);
        }
        out.push(RegionSeries::new(region, start, cases, population)?);
    }
    Ok(out)
}

/// Replaces negative counts left to right with the most recent preceding
/// value after replacement; a negative on the first day becomes 0. Incidence
/// is recomputed. Idempotent.
pub fn preprocess(series: &RegionSeries) -> RegionSeries {
    let mut cases = series.cases.clone();
    for i in 0..cases.len() {
        if cases[i] < 0 {
            cases[i] = if i == 0 { 0 } else { cases[i - 1] };
        }
    }
    RegionSeries::new(
        series.region_id.clone(),
        series.start,
        cases,
        series.population,
    )
    .expect("validated on construction")
}

/// Epidemic phase labels used to group evaluation results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    ExponentialIncrease,
    SubexponentialIncrease,
    Plateau,
    SubexponentialDecline,
    ExponentialDecline,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::ExponentialIncrease => "exponential_increase",
            Phase::SubexponentialIncrease => "subexponential_increase",
            Phase::Plateau => "plateau",
            Phase::SubexponentialDecline => "subexponential_decline",
            Phase::ExponentialDecline => "exponential_decline",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "exponential_increase" => Ok(Phase::ExponentialIncrease),
            "subexponential_increase" => Ok(Phase::SubexponentialIncrease),
            "plateau" => Ok(Phase::Plateau),
            "subexponential_decline" => Ok(Phase::SubexponentialDecline),
            "exponential_decline" => Ok(Phase::ExponentialDecline),
            other => Err(Error::data(format!("unknown phase label '{other}'"))),
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-region phase intervals. Intervals are closed and must not overlap
/// within a region; days without a label are allowed.
#[derive(Debug, Clone, Default)]
pub struct PhaseSet {
    by_region: BTreeMap<String, Vec<(NaiveDate, NaiveDate, Phase)>>,
}

impl PhaseSet {
    /// Loads phase intervals from a delimited file with columns
    /// `region,start,end,phase`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            region: String,
            start: NaiveDate,
            end: NaiveDate,
            phase: String,
        }
        let mut reader = csv::Reader::from_path(path.as_ref())?;
        let mut by_region: BTreeMap<String, Vec<(NaiveDate, NaiveDate, Phase)>> = BTreeMap::new();
        for row in reader.deserialize() {
            let row: Row = row?;
            if row.end < row.start {
                return Err(Error::data(format!(
                    "region {}: phase interval ends before it starts",
                    row.region
                )));
            }
            by_region.entry(row.region).or_default().push((
                row.start,
                row.end,
                row.phase.parse()?,
            ));
        }
        for (region, intervals) in &mut by_region {
            intervals.sort_by_key(|&(start, _, _)| start);
            for pair in intervals.windows(2) {
                if pair[1].0 <= pair[0].1 {
                    return Err(Error::data(format!(
                        "region {region}: overlapping phase intervals"
                    )));
                }
            }
        }
        Ok(PhaseSet { by_region })
    }

    pub fn phase_at(&self, region: &str, date: NaiveDate) -> Option<Phase> {
        self.by_region.get(region).and_then(|intervals| {
            intervals
                .iter()
                .find(|&&(start, end, _)| start <= date && date <= end)
                .map(|&(_, _, phase)| phase)
        })
    }
}

/// The data a model sees when fit at one forecast origin: the origin day and
/// the 56 days before it, as raw counts, incidence per 100k, and
/// log(incidence + offset).
#[derive(Debug, Clone)]
pub struct TrainingWindow {
    pub region_id: String,
    pub origin: NaiveDate,
    pub population: u64,
    pub log_offset: f64,
    /// Date of `cases[0]`; `cases[WINDOW_LEN - 1]` falls on the origin.
    pub start: NaiveDate,
    pub cases: Vec<f64>,
    pub incidence: Vec<f64>,
    pub log_values: Vec<f64>,
}

impl TrainingWindow {
    /// Weekday of window position `i`, as 0 = Monday .. 6 = Sunday.
    pub fn weekday(&self, i: usize) -> usize {
        (self.start + Days::new(i as u64))
            .weekday()
            .num_days_from_monday() as usize
    }

    /// Weekday of forecast day `h` (1-based after the origin).
    pub fn future_weekday(&self, h: usize) -> usize {
        (self.origin + Days::new(h as u64))
            .weekday()
            .num_days_from_monday() as usize
    }
}

/// log(count * 1e5 / population + offset)
pub fn log_incidence(count: f64, population: u64, offset: f64) -> f64 {
    (count * PER_100K / population as f64 + offset).ln()
}

/// Inverse of [`log_incidence`], rounded to a non-negative whole count.
pub fn count_from_log(y: f64, population: u64, offset: f64) -> f64 {
    let incidence = y.exp() - offset;
    (incidence * population as f64 / PER_100K).round().max(0.0)
}

/// Extracts the training window ending at `origin`.
///
/// Errors when the origin is outside the series or has fewer than
/// [`TRAIN_DAYS`] days of history before it. Counts are assumed preprocessed;
/// negative values are rejected.
pub fn training_window(
    series: &RegionSeries,
    origin: NaiveDate,
    log_offset: f64,
) -> Result<TrainingWindow> {
    if !(log_offset > 0.0) {
        return Err(Error::config("log offset must be positive"));
    }
    let idx = series
        .index_of(origin)
        .ok_or_else(|| Error::data(format!("origin {origin} outside series")))?;
    if idx < TRAIN_DAYS {
        return Err(Error::data(format!(
            "origin {origin} has only {idx} days of history, need {TRAIN_DAYS}"
        )));
    }
    let lo = idx - TRAIN_DAYS;
    let cases: Vec<f64> = series.cases[lo..=idx]
        .iter()
        .map(|&c| {
            if c < 0 {
                Err(Error::data("window contains negative counts; preprocess first"))
            } else {
                Ok(c as f64)
            }
        })
        .collect::<Result<_>>()?;
    let incidence: Vec<f64> = cases
        .iter()
        .map(|&c| c * PER_100K / series.population as f64)
        .collect();
    let log_values = incidence.iter().map(|&v| (v + log_offset).ln()).collect();
    Ok(TrainingWindow {
        region_id: series.region_id.clone(),
        origin,
        population: series.population,
        log_offset,
        start: series.date(lo),
        cases,
        incidence,
        log_values,
    })
}

/// Sundays in `[first, last]` usable as forecast origins: at least
/// [`TRAIN_DAYS`] days of history before the origin and [`HORIZON`] observed
/// days after it, so every forecast made at the origin can be scored.
pub fn forecast_origins(
    series: &RegionSeries,
    first: NaiveDate,
    last: NaiveDate,
) -> Result<Vec<NaiveDate>> {
    if first > last {
        return Err(Error::config(format!(
            "origin range starts after it ends ({first} > {last})"
        )));
    }
    let earliest = series.start_date() + Days::new(TRAIN_DAYS as u64);
    let latest = series.end_date() - Days::new(HORIZON as u64);
    let lo = first.max(earliest);
    let hi = last.min(latest);
    let mut out = Vec::new();
    let mut d = lo;
    // Advance to the first Sunday at or after lo.
    let ahead = (Weekday::Sun.num_days_from_monday() + 7
        - d.weekday().num_days_from_monday())
        % 7;
    d = d + Days::new(ahead as u64);
    while d <= hi {
        out.push(d);
        d = d + Days::new(7);
    }
    Ok(out)
}
