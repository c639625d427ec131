//! Seasonal ARIMA on log incidence.
//!
//! The weekly cycle is removed by one seasonal difference at lag 7; an
//! optional regular difference (d up to 2) handles residual trend. The
//! remaining series gets an ARMA(p, q) with intercept, fit with a conditional
//! Gaussian likelihood where presample errors are zero.

use crate::corpus::{count_from_log, TrainingWindow, HORIZON};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::samplers::{
    adaptive_metropolis, dens, normal_draw, ChainSpec, PosteriorDraws, StreamRng,
};

/// Seasonal period: one week of daily data.
pub const SEASON: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SarimaConfig {
    pub p: usize,
    pub d: usize,
    pub q: usize,
}

impl Default for SarimaConfig {
    fn default() -> Self {
        SarimaConfig { p: 1, d: 0, q: 1 }
    }
}

impl SarimaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p > 2 || self.q > 2 || self.d > 2 {
            return Err(Error::config(format!(
                "orders must be at most 2 (got p={}, d={}, q={})",
                self.p, self.d, self.q
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        2 + self.p + self.q
    }
}

/// y[t] - y[t - period] for t >= period.
pub fn seasonal_difference(y: &[f64], period: usize) -> Vec<f64> {
    y.iter()
        .skip(period)
        .zip(y)
        .map(|(&cur, &prev)| cur - prev)
        .collect()
}

/// First difference.
pub fn difference(y: &[f64]) -> Vec<f64> {
    y.windows(2).map(|w| w[1] - w[0]).collect()
}

/// One-step errors of an ARMA(p, q) with intercept under zero presample
/// errors. Returns the errors for t = p .. len-1, in order.
pub fn arma_residuals(z: &[f64], alpha: f64, beta: &[f64], phi: &[f64]) -> Vec<f64> {
    let p = beta.len();
    let mut eps = vec![0.0; z.len()];
    for t in p..z.len() {
        let mut mean = alpha;
        for (i, &b) in beta.iter().enumerate() {
            mean += b * z[t - 1 - i];
        }
        for (j, &f) in phi.iter().enumerate() {
            if t >= p + 1 + j {
                mean += f * eps[t - 1 - j];
            }
        }
        eps[t] = z[t] - mean;
    }
    eps.split_off(p)
}

/// Conditional Gaussian log likelihood of the ARMA given sigma.
pub fn arma_loglik(z: &[f64], alpha: f64, beta: &[f64], phi: &[f64], sigma: f64) -> f64 {
    arma_residuals(z, alpha, beta, phi)
        .iter()
        .map(|&e| dens::normal_lpdf(e, 0.0, sigma))
        .sum()
}

#[derive(Debug, Clone)]
pub struct SarimaFit {
    pub posterior: PosteriorDraws,
    pub window: TrainingWindow,
    pub config: SarimaConfig,
}

fn unpack(params: &[f64], cfg: &SarimaConfig) -> (f64, Vec<f64>, Vec<f64>, f64) {
    let alpha = params[0];
    let beta = params[1..1 + cfg.p].to_vec();
    let phi = params[1 + cfg.p..1 + cfg.p + cfg.q].to_vec();
    let sigma = params[1 + cfg.p + cfg.q].exp();
    (alpha, beta, phi, sigma)
}

/// The d-times differenced, seasonally differenced log values.
fn design_series(window: &TrainingWindow, d: usize) -> Vec<f64> {
    let mut z = seasonal_difference(&window.log_values, SEASON);
    for _ in 0..d {
        z = difference(&z);
    }
    z
}

/// Fits the seasonal ARIMA by MCMC.
///
/// Priors: intercept Normal(0, 2.5), AR and MA coefficients Normal(0, 0.5),
/// residual scale half-Student-t(3, 1) sampled on the log scale.
pub fn fit_sarima(
    window: &TrainingWindow,
    config: &SarimaConfig,
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<SarimaFit> {
    config.validate()?;
    if window.log_values.len() <= SEASON + config.d {
        return Err(Error::data("window too short to difference"));
    }
    let z = design_series(window, config.d);
    if z.len() < config.p + config.q + 4 {
        return Err(Error::data(format!(
            "window too short for orders p={}, d={}, q={}",
            config.p, config.d, config.q
        )));
    }

    let cfg = *config;
    let zc = z.clone();
    let log_post = move |params: &[f64]| -> f64 {
        let (alpha, beta, phi, sigma) = unpack(params, &cfg);
        let mut lp = dens::normal_lpdf(alpha, 0.0, 2.5);
        for &b in &beta {
            lp += dens::normal_lpdf(b, 0.0, 0.5);
        }
        for &f in &phi {
            lp += dens::normal_lpdf(f, 0.0, 0.5);
        }
        let log_sigma = params[params.len() - 1];
        lp += dens::half_student_t_lpdf(sigma, 3.0, 1.0) + log_sigma;
        lp + arma_loglik(&zc, alpha, beta.as_slice(), phi.as_slice(), sigma)
    };

    let m = z.len() as f64;
    let z_mean = z.iter().sum::<f64>() / m;
    let z_sd = (z.iter().map(|&x| (x - z_mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
    let mut init = vec![0.0; config.n_params()];
    init[0] = z_mean;
    let last = init.len() - 1;
    init[last] = z_sd.max(1e-3).ln();

    let mut names: Vec<String> = vec!["alpha".into()];
    for i in 1..=config.p {
        names.push(format!("beta_{i}"));
    }
    for j in 1..=config.q {
        names.push(format!("phi_{j}"));
    }
    names.push("log_sigma".into());
    let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();

    let posterior = adaptive_metropolis(log_post, &init, &name_refs, spec, rng)?;
    Ok(SarimaFit {
        posterior,
        window: window.clone(),
        config: *config,
    })
}

/// Simulates future paths and undoes the differencing.
///
/// Each retained draw reconstructs the training errors, then iterates the
/// ARMA forward with fresh Gaussian innovations, integrates the regular
/// differences, adds back the seasonal lag, and converts log incidence to
/// counts.
pub fn forecast_sarima(fit: &SarimaFit, n_draws: usize, rng: &mut StreamRng) -> Result<ForecastDraws> {
    if n_draws == 0 {
        return Err(Error::config("need at least one draw"));
    }
    let window = &fit.window;
    let cfg = &fit.config;
    // Differencing stages: stages[0] is the seasonal difference, stages[k]
    // adds k regular differences. The ARMA lives on stages[d].
    let mut stages: Vec<Vec<f64>> = vec![seasonal_difference(&window.log_values, SEASON)];
    for _ in 0..cfg.d {
        let next = difference(stages.last().expect("non-empty"));
        stages.push(next);
    }
    let zd = stages.last().expect("non-empty").clone();

    let mut rows = Vec::with_capacity(n_draws);
    for params in fit.posterior.thin(n_draws) {
        let (alpha, beta, phi, sigma) = unpack(params, cfg);
        let resid = arma_residuals(&zd, alpha, &beta, &phi);
        let mut zx = zd.clone();
        let mut ex = vec![0.0; cfg.p];
        ex.extend_from_slice(&resid);
        let mut future = Vec::with_capacity(HORIZON);
        for _ in 0..HORIZON {
            let t = zx.len();
            let mut mean = alpha;
            for (i, &b) in beta.iter().enumerate() {
                mean += b * zx[t - 1 - i];
            }
            for (j, &f) in phi.iter().enumerate() {
                mean += f * ex[t - 1 - j];
            }
            let e = normal_draw(0.0, sigma, rng);
            zx.push(mean + e);
            ex.push(e);
            future.push(mean + e);
        }
        // Integrate the regular differences from the innermost stage out.
        for stage in (0..cfg.d).rev() {
            let mut level = *stages[stage].last().expect("non-empty");
            for v in future.iter_mut() {
                level += *v;
                *v = level;
            }
        }
        // Add back the seasonal lag; within-horizon lags chain onto already
        // forecast days.
        let y = &window.log_values;
        let mut y_future = Vec::with_capacity(HORIZON);
        for (k, &z) in future.iter().enumerate() {
            let lag_idx = y.len() + k - SEASON;
            let y_lag = if lag_idx < y.len() {
                y[lag_idx]
            } else {
                y_future[lag_idx - y.len()]
            };
            y_future.push(z + y_lag);
        }
        rows.push(
            y_future
                .into_iter()
                .map(|v| count_from_log(v, window.population, window.log_offset))
                .collect(),
        );
    }
    ForecastDraws::new(
        "sarima",
        window.region_id.clone(),
        window.origin,
        window.population,
        rows,
    )
}
