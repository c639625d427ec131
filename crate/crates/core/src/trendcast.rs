//! Piecewise-linear trend model with weekly Fourier seasonality on log
//! incidence.
//!
//! The trend is a straight line whose slope may shift at evenly spaced
//! changepoints in the first 80% of the window; shift sizes get a sparse
//! Laplace prior. Forecasts stay honest about trend uncertainty by planting
//! new changepoints in the future at the rate they occurred in training.

use rand::Rng;

use crate::corpus::{count_from_log, TrainingWindow, HORIZON, TRAIN_DAYS};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::samplers::{
    adaptive_metropolis, dens, laplace_draw, normal_draw, poisson_draw, ChainSpec,
    PosteriorDraws, StreamRng,
};

/// Weekly period for the seasonal component.
pub const PERIOD: f64 = 7.0;
/// Harmonics in the seasonal component.
pub const FOURIER_ORDER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrendcastConfig {
    /// Number of potential slope changepoints.
    pub n_changepoints: usize,
    /// Laplace scale of the changepoint magnitudes; larger values let the
    /// trend bend more.
    pub changepoint_scale: f64,
}

impl Default for TrendcastConfig {
    fn default() -> Self {
        TrendcastConfig {
            n_changepoints: 10,
            changepoint_scale: 0.45,
        }
    }
}

impl TrendcastConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_changepoints == 0 {
            return Err(Error::config("need at least one changepoint"));
        }
        if !(self.changepoint_scale > 0.0) {
            return Err(Error::config("changepoint scale must be positive"));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        2 + self.n_changepoints + 2 * FOURIER_ORDER + 1
    }
}

/// Candidate changepoint times: evenly spaced over the first 80% of
/// `[0, span]`, i.e. `0.8 * span * j / n` for j = 1..=n.
pub fn changepoints(n: usize, span: f64) -> Vec<f64> {
    (1..=n).map(|j| 0.8 * span * j as f64 / n as f64).collect()
}

/// Piecewise-linear trend, continuous at every changepoint: slope starts at
/// `k` and gains `delta_j` once `t` passes `cps[j]`; the intercept adjusts by
/// `-delta_j * cps[j]` to keep the line connected.
pub fn piecewise_trend(t: f64, k: f64, m: f64, cps: &[f64], deltas: &[f64]) -> f64 {
    let mut slope = k;
    let mut intercept = m;
    for (&s, &d) in cps.iter().zip(deltas) {
        if s <= t {
            slope += d;
            intercept -= d * s;
        }
    }
    slope * t + intercept
}

/// Fourier features at time `t`: [cos(2*pi*n*t/p), sin(2*pi*n*t/p)] for
/// n = 1..=order, interleaved.
pub fn fourier_terms(t: f64, period: f64, order: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * order);
    for n in 1..=order {
        let ang = 2.0 * std::f64::consts::PI * n as f64 * t / period;
        out.push(ang.cos());
        out.push(ang.sin());
    }
    out
}

fn seasonal(coefs: &[f64], features: &[f64]) -> f64 {
    coefs.iter().zip(features).map(|(c, f)| c * f).sum()
}

#[derive(Debug, Clone)]
pub struct TrendcastFit {
    pub posterior: PosteriorDraws,
    pub window: TrainingWindow,
    pub config: TrendcastConfig,
    pub cps: Vec<f64>,
}

// Parameter layout: k, m, deltas, interleaved Fourier coefficients, log sigma.
fn split_params<'p>(p: &'p [f64], cfg: &TrendcastConfig) -> (f64, f64, &'p [f64], &'p [f64], f64) {
    let j = cfg.n_changepoints;
    let k = p[0];
    let m = p[1];
    let deltas = &p[2..2 + j];
    let coefs = &p[2 + j..2 + j + 2 * FOURIER_ORDER];
    let sigma = p[2 + j + 2 * FOURIER_ORDER].exp();
    (k, m, deltas, coefs, sigma)
}

/// Fits the trend model by MCMC on the window's log incidence.
///
/// Priors: slope and intercept Normal(0, 5), changepoint magnitudes
/// Laplace(0, scale), Fourier coefficients Normal(0, 10), observation sd
/// half-Student-t(3, 1) on the log scale.
pub fn fit_trendcast(
    window: &TrainingWindow,
    config: &TrendcastConfig,
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<TrendcastFit> {
    config.validate()?;
    let y = window.log_values.clone();
    let n = y.len();
    let cps = changepoints(config.n_changepoints, TRAIN_DAYS as f64);
    let features: Vec<Vec<f64>> = (0..n)
        .map(|t| fourier_terms(t as f64, PERIOD, FOURIER_ORDER))
        .collect();

    let cfg = *config;
    let cps_l = cps.clone();
    let log_post = move |p: &[f64]| -> f64 {
        let (k, m, deltas, coefs, sigma) = split_params(p, &cfg);
        let log_sigma = p[p.len() - 1];
        let mut lp = dens::normal_lpdf(k, 0.0, 5.0) + dens::normal_lpdf(m, 0.0, 5.0);
        for &d in deltas {
            lp += dens::laplace_lpdf(d, 0.0, cfg.changepoint_scale);
        }
        for &c in coefs {
            lp += dens::normal_lpdf(c, 0.0, 10.0);
        }
        lp += dens::half_student_t_lpdf(sigma, 3.0, 1.0) + log_sigma;
        for (t, &obs) in y.iter().enumerate() {
            let mu = piecewise_trend(t as f64, k, m, &cps_l, deltas)
                + seasonal(coefs, &features[t]);
            lp += dens::normal_lpdf(obs, mu, sigma);
        }
        lp
    };

    let y0 = window.log_values[0];
    let yn = window.log_values[n - 1];
    let slope0 = (yn - y0) / TRAIN_DAYS as f64;
    let sd0 = {
        let mean = window.log_values.iter().sum::<f64>() / n as f64;
        (window
            .log_values
            .iter()
            .map(|&v| (v - mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0))
            .sqrt()
            .max(1e-3)
    };
    let mut init = vec![0.0; config.n_params()];
    init[0] = slope0;
    init[1] = y0;
    let last = init.len() - 1;
    init[last] = sd0.ln();

    let mut names: Vec<String> = vec!["k".into(), "m".into()];
    for j in 1..=config.n_changepoints {
        names.push(format!("delta_{j}"));
    }
    for o in 1..=FOURIER_ORDER {
        names.push(format!("cos_{o}"));
        names.push(format!("sin_{o}"));
    }
    names.push("log_sigma".into());
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();

    let posterior = adaptive_metropolis(log_post, &init, &name_refs, spec, rng)?;
    Ok(TrendcastFit {
        posterior,
        window: window.clone(),
        config: *config,
        cps,
    })
}

/// Simulates future log incidence and converts to counts.
///
/// Per draw, new changepoints arrive in the forecast span as a Poisson
/// process matching the training changepoint density; their magnitudes are
/// Laplace with scale set to the draw's mean absolute magnitude.
pub fn forecast_trendcast(
    fit: &TrendcastFit,
    n_draws: usize,
    rng: &mut StreamRng,
) -> Result<ForecastDraws> {
    if n_draws == 0 {
        return Err(Error::config("need at least one draw"));
    }
    let window = &fit.window;
    let cfg = &fit.config;
    let span = TRAIN_DAYS as f64;
    let rate = cfg.n_changepoints as f64 * HORIZON as f64 / span;
    let mut rows = Vec::with_capacity(n_draws);
    for p in fit.posterior.thin(n_draws) {
        let (k, m, deltas, coefs, sigma) = split_params(p, cfg);
        let n_new = poisson_draw(rate, rng) as usize;
        let laplace_scale = if deltas.is_empty() {
            cfg.changepoint_scale
        } else {
            (deltas.iter().map(|d| d.abs()).sum::<f64>() / deltas.len() as f64).max(1e-8)
        };
        let mut cps = fit.cps.clone();
        let mut all_deltas = deltas.to_vec();
        for _ in 0..n_new {
            cps.push(span + rng.random_range(0.0..HORIZON as f64));
            all_deltas.push(laplace_draw(laplace_scale, rng));
        }
        let mut row = Vec::with_capacity(HORIZON);
        for h in 1..=HORIZON {
            let t = span + h as f64;
            let mu = piecewise_trend(t, k, m, &cps, &all_deltas)
                + seasonal(coefs, &fourier_terms(t, PERIOD, FOURIER_ORDER));
            let yv = normal_draw(mu, sigma, rng);
            row.push(count_from_log(yv, window.population, window.log_offset));
        }
        rows.push(row);
    }
    ForecastDraws::new(
        "trend",
        window.region_id.clone(),
        window.origin,
        window.population,
        rows,
    )
}
