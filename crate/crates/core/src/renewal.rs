//! Renewal-equation models: expected incidence is the reproduction number
//! times the weighted sum of recent incidence, with weights from a
//! discretized generation interval.
//!
//! Two fitting strategies share this machinery:
//! - [`forecast_cori`]: conjugate gamma posterior for a constant R over a
//!   trailing window, one posterior update per generation-interval draw.
//! - [`fit_renewal_rw`] / [`forecast_renewal_rw`]: weekly R blocks tied by a
//!   random walk on the log scale, negative binomial observations, and
//!   multiplicative weekday effects, fit by MCMC.

use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::corpus::{TrainingWindow, HORIZON, WINDOW_LEN};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::samplers::{
    adaptive_metropolis, dens, negbin_draw, normal_draw, poisson_draw, sample_gamma, ChainSpec,
    PosteriorDraws, StreamRng,
};

/// Longest generation interval considered, in days.
pub const GI_SUPPORT_DAYS: usize = 21;

/// A discretized generation interval. `w[0]` is always 0 (no same-day
/// transmission); `w[1..=21]` sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationInterval {
    pub mean: f64,
    pub sd: f64,
    pub w: Vec<f64>,
}

/// Moment-matches a gamma distribution to (mean, sd) and discretizes it over
/// unit intervals: weight j covers [j-1, j), truncated at
/// [`GI_SUPPORT_DAYS`] and renormalized.
pub fn discretize_gi(mean: f64, sd: f64) -> Result<GenerationInterval> {
    if !(mean > 0.0 && sd > 0.0) {
        return Err(Error::Numeric(format!(
            "generation interval needs positive mean and sd (got {mean}, {sd})"
        )));
    }
    let shape = mean * mean / (sd * sd);
    let rate = mean / (sd * sd);
    let dist = GammaDist::new(shape, rate)
        .map_err(|e| Error::Numeric(format!("generation interval gamma: {e}")))?;
    let mut w = vec![0.0; GI_SUPPORT_DAYS + 1];
    let mut prev = 0.0;
    for (j, slot) in w.iter_mut().enumerate().skip(1) {
        let cur = dist.cdf(j as f64);
        *slot = cur - prev;
        prev = cur;
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Numeric(
            "generation interval has no mass inside the support".into(),
        ));
    }
    for x in w.iter_mut() {
        *x /= total;
    }
    Ok(GenerationInterval { mean, sd, w })
}

/// Normal hyperpriors on the generation-interval mean and sd, truncated below
/// at 0.1 when sampled.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GiHyperprior {
    pub mean: f64,
    pub mean_sd: f64,
    pub sd: f64,
    pub sd_sd: f64,
}

impl Default for GiHyperprior {
    // Central estimates 4.2 and 4.9; sds recover the reported 95% intervals
    // (3.3, 5.3) and (3.0, 8.3) under normality.
    fn default() -> Self {
        GiHyperprior {
            mean: 4.2,
            mean_sd: 2.0 / 3.92,
            sd: 4.9,
            sd_sd: 5.3 / 3.92,
        }
    }
}

const GI_TRUNCATION: f64 = 0.1;

/// Draws one generation interval from the hyperprior.
pub fn sample_gi(hyper: &GiHyperprior, rng: &mut StreamRng) -> Result<GenerationInterval> {
    let mut draw = |mu: f64, sd: f64| loop {
        let x = normal_draw(mu, sd, rng);
        if x >= GI_TRUNCATION {
            return x;
        }
    };
    let mean = draw(hyper.mean, hyper.mean_sd);
    let sd = draw(hyper.sd, hyper.sd_sd);
    discretize_gi(mean, sd)
}

/// Total infectiousness at `t`: the generation-interval-weighted sum of the
/// cases before `t`. Lags reaching past the start of `cases` contribute
/// nothing, so early values are partial sums.
pub fn total_infectiousness(cases: &[f64], w: &[f64], t: usize) -> f64 {
    let max_lag = t.min(w.len() - 1);
    let mut lambda = 0.0;
    for j in 1..=max_lag {
        lambda += w[j] * cases[t - j];
    }
    lambda
}

/// Gamma prior on R expressed as mean and sd.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RPrior {
    pub mean: f64,
    pub sd: f64,
}

impl Default for RPrior {
    fn default() -> Self {
        RPrior {
            mean: 1.10,
            sd: 0.04,
        }
    }
}

impl RPrior {
    /// Shape (mean/sd)^2 and rate mean/sd^2.
    pub fn shape_rate(&self) -> (f64, f64) {
        let shape = (self.mean / self.sd).powi(2);
        let rate = self.mean / (self.sd * self.sd);
        (shape, rate)
    }
}

/// Gamma posterior for a constant R over a trailing estimation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RPosterior {
    pub shape: f64,
    pub rate: f64,
    /// Inclusive index range of the estimation window within the case series.
    pub window: (usize, usize),
}

impl RPosterior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn sample(&self, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
        sample_gamma(self.shape, self.rate, n, rng)
    }
}

/// Conjugate update for R constant over the last `tau` days: shape gains the
/// window's case total, rate gains its total infectiousness.
pub fn cori_posterior(
    cases: &[f64],
    w: &[f64],
    tau: usize,
    prior: &RPrior,
) -> Result<RPosterior> {
    if tau == 0 {
        return Err(Error::config("estimation window must be at least one day"));
    }
    if cases.len() < tau + 1 {
        return Err(Error::data(format!(
            "need at least {} days for a {tau}-day estimation window",
            tau + 1
        )));
    }
    let n = cases.len();
    let lo = n - tau;
    let mut case_sum = 0.0;
    let mut lambda_sum = 0.0;
    for t in lo..n {
        case_sum += cases[t];
        lambda_sum += total_infectiousness(cases, w, t);
    }
    let (a, b) = prior.shape_rate();
    Ok(RPosterior {
        shape: a + case_sum,
        rate: b + lambda_sum,
        window: (lo, n - 1),
    })
}

/// Simulates the renewal process forward with Poisson observations, one
/// trajectory per R draw. `gis` holds either one shared generation interval
/// or one per draw.
pub fn project_poisson(
    history: &[f64],
    r_draws: &[f64],
    gis: &[GenerationInterval],
    horizon: usize,
    rng: &mut StreamRng,
) -> Result<Vec<Vec<f64>>> {
    if gis.len() != 1 && gis.len() != r_draws.len() {
        return Err(Error::config(
            "generation interval count must be 1 or match the draw count",
        ));
    }
    if history.is_empty() {
        return Err(Error::data("cannot project from an empty history"));
    }
    let n = history.len();
    let mut out = Vec::with_capacity(r_draws.len());
    let mut ext = Vec::with_capacity(n + horizon);
    for (d, &r) in r_draws.iter().enumerate() {
        let gi = if gis.len() == 1 { &gis[0] } else { &gis[d] };
        ext.clear();
        ext.extend_from_slice(history);
        let mut row = Vec::with_capacity(horizon);
        for h in 0..horizon {
            let lambda = total_infectiousness(&ext, &gi.w, n + h);
            let c = poisson_draw(r * lambda, rng);
            row.push(c);
            ext.push(c);
        }
        out.push(row);
    }
    Ok(out)
}

/// Settings for the conjugate-window forecaster.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CoriConfig {
    /// Estimation window length in days.
    pub tau: usize,
    pub prior: RPrior,
    pub gi: GiHyperprior,
}

impl Default for CoriConfig {
    fn default() -> Self {
        CoriConfig {
            tau: 7,
            prior: RPrior::default(),
            gi: GiHyperprior::default(),
        }
    }
}

/// Forecast by the conjugate-window model: each sample path draws a
/// generation interval, updates the R posterior on the trailing window, draws
/// R, and projects forward with Poisson noise.
pub fn forecast_cori(
    window: &TrainingWindow,
    cfg: &CoriConfig,
    n_draws: usize,
    rng: &mut StreamRng,
) -> Result<ForecastDraws> {
    if n_draws == 0 {
        return Err(Error::config("need at least one draw"));
    }
    let n = window.cases.len();
    let mut rows = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        let gi = sample_gi(&cfg.gi, rng)?;
        let post = cori_posterior(&window.cases, &gi.w, cfg.tau, &cfg.prior)?;
        let r = post.sample(1, rng)?[0];
        let mut ext = window.cases.clone();
        let mut row = Vec::with_capacity(HORIZON);
        for h in 0..HORIZON {
            let lambda = total_infectiousness(&ext, &gi.w, n + h);
            let c = poisson_draw(r * lambda, rng);
            row.push(c);
            ext.push(c);
        }
        rows.push(row);
    }
    ForecastDraws::new(
        "cori",
        window.region_id.clone(),
        window.origin,
        window.population,
        rows,
    )
}

/// Number of weekly R blocks covering the training window: 7 full weeks plus
/// a block for the remaining 8th week that absorbs the final day.
pub const RW_BLOCKS: usize = 8;

/// Week block of window day `i` (0-based): `min(i / 7, RW_BLOCKS - 1)`.
pub fn week_block(i: usize) -> usize {
    (i / 7).min(RW_BLOCKS - 1)
}

/// Posterior and context for the random-walk renewal model.
#[derive(Debug, Clone)]
pub struct RenewalRwFit {
    pub posterior: PosteriorDraws,
    pub window: TrainingWindow,
    pub gi: GenerationInterval,
}

// Parameter layout: 6 free weekday log-effects (Mon..Sat; Sunday is minus
// their sum), 8 weekly log-R values, log sigma of the R random walk, log
// dispersion of the negative binomial.
const WD_FREE: usize = 6;
const P_RW: usize = WD_FREE + RW_BLOCKS + 2;
const IDX_LOGR: usize = WD_FREE;
const IDX_LSIG: usize = WD_FREE + RW_BLOCKS;
const IDX_LDISP: usize = WD_FREE + RW_BLOCKS + 1;

const RW_NAMES: [&str; P_RW] = [
    "eff_mon", "eff_tue", "eff_wed", "eff_thu", "eff_fri", "eff_sat", "logr_1", "logr_2",
    "logr_3", "logr_4", "logr_5", "logr_6", "logr_7", "logr_8", "log_sigma_rw", "log_disp",
];

fn weekday_log_effect(params: &[f64], weekday: usize) -> f64 {
    if weekday < WD_FREE {
        params[weekday]
    } else {
        -params[..WD_FREE].iter().sum::<f64>()
    }
}

/// Fits the random-walk renewal model by MCMC.
///
/// Weekly log-R blocks follow a Gaussian random walk whose innovation sd has
/// a half-normal(0, 0.2) prior; the first block is anchored at
/// Normal(ln prior mean, prior sd). Observations are negative binomial around
/// R times total infectiousness times a weekday factor.
pub fn fit_renewal_rw(
    window: &TrainingWindow,
    gi: &GenerationInterval,
    prior: &RPrior,
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<RenewalRwFit> {
    if window.cases.len() != WINDOW_LEN {
        return Err(Error::data(format!(
            "expected a {WINDOW_LEN}-day training window"
        )));
    }
    // Infectiousness is data, not parameters: compute once.
    let lambda: Vec<f64> = (0..WINDOW_LEN)
        .map(|t| total_infectiousness(&window.cases, &gi.w, t))
        .collect();
    let weekdays: Vec<usize> = (0..WINDOW_LEN).map(|i| window.weekday(i)).collect();
    let cases = window.cases.clone();
    let anchor_mean = prior.mean.ln();
    let anchor_sd = prior.sd;

    let log_post = move |p: &[f64]| -> f64 {
        let mut lp = 0.0;
        for &g in &p[..WD_FREE] {
            lp += dens::normal_lpdf(g, 0.0, 0.2);
        }
        let sigma_rw = p[IDX_LSIG].exp();
        // Half-normal prior on sigma plus the log-scale Jacobian.
        lp += dens::half_normal_lpdf(sigma_rw, 0.2) + p[IDX_LSIG];
        lp += dens::normal_lpdf(p[IDX_LOGR], anchor_mean, anchor_sd);
        for k in 1..RW_BLOCKS {
            lp += dens::normal_lpdf(p[IDX_LOGR + k], p[IDX_LOGR + k - 1], sigma_rw);
        }
        // Half-normal(0, 10) prior on 1/sqrt(dispersion), with the Jacobian
        // of s = exp(-log_disp / 2).
        let s = (-p[IDX_LDISP] / 2.0).exp();
        lp += dens::half_normal_lpdf(s, 10.0) + (s / 2.0).ln();
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let phi = p[IDX_LDISP].exp();
        for t in 1..WINDOW_LEN {
            let mu = (weekday_log_effect(p, weekdays[t]) + p[IDX_LOGR + week_block(t)]).exp()
                * lambda[t];
            lp += dens::neg_binomial_lpmf(cases[t], mu.max(1e-8), phi);
        }
        lp
    };

    let mut init = vec![0.0; P_RW];
    for k in 0..RW_BLOCKS {
        init[IDX_LOGR + k] = anchor_mean;
    }
    init[IDX_LSIG] = (0.1f64).ln();
    init[IDX_LDISP] = (10.0f64).ln();

    let posterior = adaptive_metropolis(log_post, &init, &RW_NAMES, spec, rng)?;
    Ok(RenewalRwFit {
        posterior,
        window: window.clone(),
        gi: gi.clone(),
    })
}

/// Simulates the fitted random-walk model forward. Each retained draw extends
/// the log-R walk two more weekly steps and generates negative binomial
/// observations day by day, feeding simulated cases back into the renewal
/// sum.
pub fn forecast_renewal_rw(
    fit: &RenewalRwFit,
    n_draws: usize,
    rng: &mut StreamRng,
) -> Result<ForecastDraws> {
    if n_draws == 0 {
        return Err(Error::config("need at least one draw"));
    }
    let window = &fit.window;
    let n = window.cases.len();
    let mut rows = Vec::with_capacity(n_draws);
    let mut ext = Vec::with_capacity(n + HORIZON);
    for p in fit.posterior.thin(n_draws) {
        let sigma_rw = p[IDX_LSIG].exp();
        let phi = p[IDX_LDISP].exp();
        let logr_w1 = normal_draw(p[IDX_LOGR + RW_BLOCKS - 1], sigma_rw, rng);
        let logr_w2 = normal_draw(logr_w1, sigma_rw, rng);
        ext.clear();
        ext.extend_from_slice(&window.cases);
        let mut row = Vec::with_capacity(HORIZON);
        for h in 1..=HORIZON {
            let logr = if h <= 7 { logr_w1 } else { logr_w2 };
            let lambda = total_infectiousness(&ext, &fit.gi.w, n + h - 1);
            let mu = (weekday_log_effect(p, window.future_weekday(h)) + logr).exp() * lambda;
            let c = negbin_draw(mu, phi, rng)?;
            row.push(c);
            ext.push(c);
        }
        rows.push(row);
    }
    ForecastDraws::new(
        "renewal-rw",
        window.region_id.clone(),
        window.origin,
        window.population,
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{training_window, RegionSeries};
    use crate::samplers::seeded_rng;
    use chrono::NaiveDate;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn lag1_gi() -> GenerationInterval {
        let mut w = vec![0.0; GI_SUPPORT_DAYS + 1];
        w[1] = 1.0;
        GenerationInterval {
            mean: 1.0,
            sd: 0.1,
            w,
        }
    }

    #[test]
    fn discretized_gi_matches_reference_values() {
        let gi = discretize_gi(4.2, 4.9).unwrap();
        assert_eq!(gi.w.len(), GI_SUPPORT_DAYS + 1);
        assert_eq!(gi.w[0], 0.0);
        let total: f64 = gi.w.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Frozen against an independent gamma CDF implementation.
        assert!((gi.w[1] - 0.28599714949855914).abs() < 1e-9, "w1 {}", gi.w[1]);
        assert!((gi.w[2] - 0.15772249353484133).abs() < 1e-9, "w2 {}", gi.w[2]);
        assert!((gi.w[7] - 0.044211433038104916).abs() < 1e-9, "w7 {}", gi.w[7]);
        assert!((gi.w[14] - 0.010697612060063418).abs() < 1e-9);
        assert!((gi.w[21] - 0.0028138726207233705).abs() < 1e-9);
        // Shape below 1 makes the density decreasing: first lag dominates.
        assert!(gi.w[1] > gi.w[2]);
    }

    #[test]
    fn discretize_rejects_bad_moments() {
        assert!(discretize_gi(0.0, 1.0).is_err());
        assert!(discretize_gi(4.0, -1.0).is_err());
    }

    #[test]
    fn infectiousness_with_lag1_mass_shifts_cases() {
        let gi = lag1_gi();
        let cases = [3.0, 9.0, 27.0];
        assert_eq!(total_infectiousness(&cases, &gi.w, 0), 0.0);
        assert_eq!(total_infectiousness(&cases, &gi.w, 1), 3.0);
        assert_eq!(total_infectiousness(&cases, &gi.w, 2), 9.0);
    }

    #[test]
    fn infectiousness_truncates_at_series_start() {
        let gi = discretize_gi(4.2, 4.9).unwrap();
        let cases = [10.0, 10.0];
        let lam = total_infectiousness(&cases, &gi.w, 1);
        assert!((lam - 10.0 * gi.w[1]).abs() < 1e-12);
    }

    #[test]
    fn conjugate_update_adds_cases_and_infectiousness() {
        let gi = lag1_gi();
        let cases = vec![10.0; 8];
        let post = cori_posterior(&cases, &gi.w, 7, &RPrior::default()).unwrap();
        // shape: (1.10/0.04)^2 + 70, rate: 1.10/0.04^2 + 70
        assert!((post.shape - 826.25).abs() < 1e-9);
        assert!((post.rate - 757.5).abs() < 1e-9);
        assert!((post.mean() - 826.25 / 757.5).abs() < 1e-12);
        assert_eq!(post.window, (1, 7));
    }

    #[test]
    fn conjugate_update_with_no_signal_recovers_prior() {
        let gi = lag1_gi();
        let cases = vec![0.0; 10];
        let post = cori_posterior(&cases, &gi.w, 7, &RPrior::default()).unwrap();
        let (a, b) = RPrior::default().shape_rate();
        assert_eq!(post.shape, a);
        assert_eq!(post.rate, b);
        assert!((post.mean() - 1.10).abs() < 1e-12);
    }

    #[test]
    fn conjugate_update_rejects_short_series() {
        let gi = lag1_gi();
        assert!(cori_posterior(&vec![1.0; 7], &gi.w, 7, &RPrior::default()).is_err());
        assert!(cori_posterior(&vec![1.0; 8], &gi.w, 0, &RPrior::default()).is_err());
    }

    #[test]
    fn projection_is_zero_for_zero_history_or_zero_r() {
        let gi = lag1_gi();
        let mut rng = seeded_rng(1, &["proj-zero"]);
        let rows = project_poisson(&[0.0; 30], &[1.5, 2.0], &[gi.clone()], 14, &mut rng).unwrap();
        assert!(rows.iter().flatten().all(|&c| c == 0.0));
        let rows = project_poisson(&[50.0; 30], &[0.0], &[gi], 14, &mut rng).unwrap();
        assert!(rows.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn projection_shape_and_determinism() {
        let gi = discretize_gi(4.2, 4.9).unwrap();
        let history = vec![40.0; 60];
        let r = vec![1.2; 5];
        let a = {
            let mut rng = seeded_rng(9, &["proj-det"]);
            project_poisson(&history, &r, &[gi.clone()], 14, &mut rng).unwrap()
        };
        let b = {
            let mut rng = seeded_rng(9, &["proj-det"]);
            project_poisson(&history, &r, &[gi.clone()], 14, &mut rng).unwrap()
        };
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.iter().all(|row| row.len() == 14));
        assert!(project_poisson(&history, &r, &[gi.clone(), gi], 14, &mut seeded_rng(0, &[]))
            .is_err());
    }

    #[test]
    fn gi_samples_respect_truncation_and_seed() {
        let hyper = GiHyperprior {
            mean: 0.3,
            mean_sd: 1.0,
            sd: 0.5,
            sd_sd: 1.0,
        };
        let mut rng = seeded_rng(3, &["gi-trunc"]);
        for _ in 0..200 {
            let gi = sample_gi(&hyper, &mut rng).unwrap();
            assert!(gi.mean >= GI_TRUNCATION);
            assert!(gi.sd >= GI_TRUNCATION);
        }
        let a = sample_gi(&GiHyperprior::default(), &mut seeded_rng(4, &["gi"])).unwrap();
        let b = sample_gi(&GiHyperprior::default(), &mut seeded_rng(4, &["gi"])).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn week_blocks_cover_the_window() {
        assert_eq!(week_block(0), 0);
        assert_eq!(week_block(6), 0);
        assert_eq!(week_block(7), 1);
        assert_eq!(week_block(48), 6);
        assert_eq!(week_block(49), 7);
        assert_eq!(week_block(56), 7);
    }

    #[test]
    fn weekday_effects_sum_to_zero() {
        let mut p = vec![0.0; P_RW];
        for (i, v) in [0.1, -0.2, 0.3, 0.05, -0.1, 0.15].iter().enumerate() {
            p[i] = *v;
        }
        let total: f64 = (0..7).map(|wd| weekday_log_effect(&p, wd)).sum();
        assert!(total.abs() < 1e-12);
    }

    fn synthetic_window(seed: u64) -> TrainingWindow {
        // Renewal process with R stepping from 1.3 down to 0.9 plus weekday dips.
        let gi = discretize_gi(4.2, 4.9).unwrap();
        let mut rng = seeded_rng(seed, &["synthetic-window"]);
        let mut cases: Vec<f64> = vec![30.0; 5];
        let n_total = 80;
        for t in 5..n_total {
            let r = if t < 40 { 1.3 } else { 0.9 };
            let wd_factor = if t % 7 == 0 { 0.8 } else { 1.05 };
            let lam = total_infectiousness(&cases, &gi.w, t);
            cases.push(poisson_draw(r * wd_factor * lam, &mut rng));
        }
        let series = RegionSeries::new(
            "syn",
            date("2020-01-05"),
            cases.iter().map(|&c| c as i64).collect(),
            1_000_000,
        )
        .unwrap();
        training_window(&series, series.date(n_total - 1), 0.01).unwrap()
    }

    #[test]
    fn renewal_rw_fit_and_forecast_smoke() {
        let window = synthetic_window(17);
        let gi = discretize_gi(4.2, 4.9).unwrap();
        let spec = ChainSpec {
            chains: 2,
            iterations: 400,
            warmup: 200,
        };
        let mut rng = seeded_rng(5, &["rw-smoke"]);
        let fit = fit_renewal_rw(&window, &gi, &RPrior::default(), &spec, &mut rng).unwrap();
        assert_eq!(fit.posterior.n_params(), P_RW);
        assert_eq!(fit.posterior.len(), spec.total_retained());
        assert!(fit.posterior.rhat.iter().all(|r| r.is_finite()));
        let fc = forecast_renewal_rw(&fit, 100, &mut rng).unwrap();
        assert_eq!(fc.n_draws(), 100);
        assert_eq!(fc.model_id, "renewal-rw");
        assert!(fc.draws.iter().flatten().all(|&c| c >= 0.0 && c == c.round()));
    }
}
