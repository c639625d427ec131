//! Forecast evaluation: weekly aggregation, CRPS on the log scale, PIT,
//! interval coverage, dispersion, bias, pairwise relative skill, and hotspot
//! classification.
//!
//! Daily forecasts are aggregated to week totals before scoring, which
//! removes weekday structure from the comparison. All scoring functions are
//! pure.

use chrono::{Days, NaiveDate};
use rand::Rng;

use crate::corpus::{Phase, PhaseSet, RegionSeries, HORIZON, PER_100K};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::samplers::StreamRng;

/// Scores for one (model, region, origin, week) target.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub model_id: String,
    pub region_id: String,
    pub origin: NaiveDate,
    /// 1 or 2 weeks ahead.
    pub week: u8,
    pub crps_log: f64,
    pub pit: f64,
    pub covered_50: bool,
    pub covered_95: bool,
    pub dispersion: f64,
    pub bias: f64,
    pub phase: Option<Phase>,
}

/// Hotspot truth and per-model predicted probabilities for one
/// (region, origin, week) target.
#[derive(Debug, Clone, PartialEq)]
pub struct HotspotRecord {
    pub region_id: String,
    pub origin: NaiveDate,
    pub week: u8,
    /// Target date: origin + 7 * week.
    pub target: NaiveDate,
    pub label: u8,
    /// False when the baseline week's incidence fails the 70-per-100k filter.
    pub included: bool,
    /// Predicted hotspot probability per model id.
    pub probs: std::collections::BTreeMap<String, f64>,
}

/// Pairwise score ratios and per-model relative skill.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeSkillTable {
    pub models: Vec<String>,
    /// theta[i][j]: geometric mean over targets of score_i / score_j.
    pub theta: Vec<Vec<f64>>,
    /// Geometric mean of theta[i][j] over j != i.
    pub skill: Vec<f64>,
}

/// Weekly totals of the daily draws: (week-1 sums, week-2 sums).
pub fn weekly_aggregate(draws: &ForecastDraws) -> Result<(Vec<f64>, Vec<f64>)> {
    if draws.horizon() != HORIZON {
        return Err(Error::data("weekly aggregation expects a 14-day horizon"));
    }
    Ok((draws.weekly_counts(1), draws.weekly_counts(2)))
}

/// Observed week totals after the origin: days 1..=7 and 8..=14.
pub fn observed_weekly(series: &RegionSeries, origin: NaiveDate) -> Result<(f64, f64)> {
    let idx = series
        .index_of(origin)
        .ok_or_else(|| Error::data(format!("origin {origin} outside series")))?;
    if idx + HORIZON >= series.len() {
        return Err(Error::data(format!(
            "series ends before the 14-day target window after {origin}"
        )));
    }
    let sum = |lo: usize, hi: usize| -> f64 {
        series.cases[idx + lo..=idx + hi].iter().map(|&c| c as f64).sum()
    };
    Ok((sum(1, 7), sum(8, 14)))
}

fn to_log_incidence(count: f64, population: u64, offset: f64) -> f64 {
    (count * PER_100K / population as f64 + offset).ln()
}

/// CRPS of the draws against the observation, computed on
/// log(incidence + offset). Uses the closed-form sample estimator
/// (1/D)Σ|x_d − y| − (1/(2D²))ΣΣ|x_d − x_e|, which equals the integral of
/// the squared difference between the empirical CDF and the observation's
/// step function.
pub fn crps_log(
    draws: &[f64],
    observed: f64,
    population: u64,
    log_offset: f64,
) -> Result<f64> {
    let d = draws.len();
    if d < 2 {
        return Err(Error::data("CRPS needs at least two draws"));
    }
    let y = to_log_incidence(observed, population, log_offset);
    let mut xs: Vec<f64> = draws
        .iter()
        .map(|&c| to_log_incidence(c, population, log_offset))
        .collect();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite log incidence"));
    let dn = d as f64;
    let term1: f64 = xs.iter().map(|&x| (x - y).abs()).sum::<f64>() / dn;
    // Sum of |x_d - x_e| over ordered pairs via the sorted representation.
    let pair_sum: f64 = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * i as f64 + 1.0 - dn) * x)
        .sum::<f64>()
        * 2.0;
    Ok(term1 - pair_sum / (2.0 * dn * dn))
}

/// Randomized PIT for sample forecasts:
/// (#draws < obs + V (#draws == obs + 1)) / (D + 1).
pub fn pit(draws: &[f64], observed: f64, rng: &mut StreamRng) -> f64 {
    pit_with(draws, observed, rng.random_range(0.0..1.0))
}

/// PIT with the randomizer fixed; V = 0.5 gives the deterministic variant
/// used in tests.
pub fn pit_with(draws: &[f64], observed: f64, v: f64) -> f64 {
    let less = draws.iter().filter(|&&x| x < observed).count() as f64;
    let equal = draws.iter().filter(|&&x| x == observed).count() as f64;
    (less + v * (equal + 1.0)) / (draws.len() as f64 + 1.0)
}

/// Linear-interpolation (type-7) empirical quantile of unsorted data.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    quantile_sorted(&v, p)
}

fn quantile_sorted(v: &[f64], p: f64) -> f64 {
    let n = v.len();
    if n == 1 {
        return v[0];
    }
    let h = (n as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// Whether the observation falls inside the central interval of the given
/// level, with type-7 quantile endpoints.
pub fn interval_coverage(draws: &[f64], observed: f64, level: f64) -> bool {
    let mut v = draws.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let lo = quantile_sorted(&v, (1.0 - level) / 2.0);
    let hi = quantile_sorted(&v, (1.0 + level) / 2.0);
    lo <= observed && observed <= hi
}

/// Normalized median absolute deviation: 1.4826 × median |x − median(x)|.
pub fn dispersion(draws: &[f64]) -> f64 {
    let med = quantile(draws, 0.5);
    let dev: Vec<f64> = draws.iter().map(|&x| (x - med).abs()).collect();
    1.4826 * quantile(&dev, 0.5)
}

/// Fraction of draws strictly above the observation.
pub fn bias(draws: &[f64], observed: f64) -> f64 {
    draws.iter().filter(|&&x| x > observed).count() as f64 / draws.len() as f64
}

const SCORE_FLOOR: f64 = 1e-9;

/// Pairwise relative skill from per-target scores. `scores[i]` holds model
/// i's CRPS on each target, aligned across models.
pub fn relative_skill(models: &[String], scores: &[Vec<f64>]) -> Result<RelativeSkillTable> {
    if models.len() != scores.len() {
        return Err(Error::data("model list and score rows differ in length"));
    }
    if models.is_empty() {
        return Err(Error::data("relative skill needs at least one model"));
    }
    let n_targets = scores[0].len();
    if scores.iter().any(|row| row.len() != n_targets) {
        return Err(Error::data("models scored on mismatched target sets"));
    }
    if n_targets == 0 {
        return Err(Error::data("relative skill needs at least one target"));
    }
    let m = models.len();
    let logs: Vec<Vec<f64>> = scores
        .iter()
        .map(|row| row.iter().map(|&s| s.max(SCORE_FLOOR).ln()).collect())
        .collect();
    let mut theta = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let mean_log: f64 = logs[i]
                .iter()
                .zip(&logs[j])
                .map(|(a, b)| a - b)
                .sum::<f64>()
                / n_targets as f64;
            theta[i][j] = mean_log.exp();
        }
    }
    let skill: Vec<f64> = (0..m)
        .map(|i| {
            if m == 1 {
                return 1.0;
            }
            let mean_log: f64 = (0..m)
                .filter(|&j| j != i)
                .map(|j| theta[i][j].ln())
                .sum::<f64>()
                / (m as f64 - 1.0);
            mean_log.exp()
        })
        .collect();
    Ok(RelativeSkillTable {
        models: models.to_vec(),
        theta,
        skill,
    })
}

/// Observed hotspot label at `t`: weekly incidence grew at least 25% over
/// the week before. Also reports whether the target passes the minimum
/// activity filter (baseline weekly incidence at least 70 per 100k).
///
/// Growth edge cases: 0 → 0 is no hotspot; 0 → positive is one.
pub fn hotspot_label(series: &RegionSeries, t: NaiveDate) -> Result<(u8, bool)> {
    let idx = series
        .index_of(t)
        .ok_or_else(|| Error::data(format!("hotspot target {t} outside series")))?;
    if idx < 13 {
        return Err(Error::data(format!(
            "hotspot label at {t} needs 14 days of history"
        )));
    }
    let cur = series.weekly_incidence(idx).expect("bounds checked");
    let prev = series.weekly_incidence(idx - 7).expect("bounds checked");
    let label = if prev <= 0.0 {
        u8::from(cur > 0.0)
    } else {
        u8::from((cur - prev) / prev >= 0.25)
    };
    let included = prev >= 70.0;
    Ok((label, included))
}

/// Fraction of draws whose forecast weekly incidence exceeds 1.25 times the
/// observed baseline week (the week ending 7 days before the target).
pub fn hotspot_prob(draws: &ForecastDraws, series: &RegionSeries, week: u8) -> Result<f64> {
    let target = draws.origin + Days::new(7 * week as u64);
    let baseline_date = target - Days::new(7);
    let idx = series
        .index_of(baseline_date)
        .ok_or_else(|| Error::data(format!("baseline week {baseline_date} outside series")))?;
    let baseline = series
        .weekly_incidence(idx)
        .ok_or_else(|| Error::data("baseline week needs 7 days of history"))?;
    let weekly = draws.weekly_counts(week);
    let pop = draws.population as f64;
    let hits = weekly
        .iter()
        .filter(|&&count| count * PER_100K / pop > 1.25 * baseline)
        .count();
    Ok(hits as f64 / weekly.len() as f64)
}

/// Mann-Whitney AUC: probability that a random positive outranks a random
/// negative, ties counted half.
pub fn auc(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::data("probs and labels differ in length"));
    }
    let pos: Vec<f64> = probs
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&p, _)| p)
        .collect();
    let neg: Vec<f64> = probs
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&p, _)| p)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::data("AUC needs both classes present"));
    }
    let mut u = 0.0;
    for &p in &pos {
        for &n in &neg {
            u += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(u / (pos.len() * neg.len()) as f64)
}

/// Scores one stored forecast against observations: two records, one per
/// target week. The PIT randomizer is drawn from `rng` (one value per week).
pub fn score_forecast(
    draws: &ForecastDraws,
    series: &RegionSeries,
    phases: Option<&PhaseSet>,
    log_offset: f64,
    rng: &mut StreamRng,
) -> Result<[ScoreRecord; 2]> {
    let (week1, week2) = weekly_aggregate(draws)?;
    let (obs1, obs2) = observed_weekly(series, draws.origin)?;
    let pop = draws.population;
    let mut make = |week: u8, fc: &[f64], obs: f64| -> Result<ScoreRecord> {
        let target_end = draws.origin + Days::new(7 * week as u64);
        let log_fc: Vec<f64> = fc
            .iter()
            .map(|&c| to_log_incidence(c, pop, log_offset))
            .collect();
        Ok(ScoreRecord {
            model_id: draws.model_id.clone(),
            region_id: draws.region_id.clone(),
            origin: draws.origin,
            week,
            crps_log: crps_log(fc, obs, pop, log_offset)?,
            pit: pit(fc, obs, rng),
            covered_50: interval_coverage(fc, obs, 0.50),
            covered_95: interval_coverage(fc, obs, 0.95),
            dispersion: dispersion(&log_fc),
            bias: bias(fc, obs),
            phase: phases.and_then(|p| p.phase_at(&draws.region_id, target_end)),
        })
    };
    Ok([make(1, &week1, obs1)?, make(2, &week2, obs2)?])
}
