//! Gaussian process regression on centered log incidence.
//!
//! The covariance is a sum of three kernels: a squared-exponential with a
//! long length scale for the trend, one with a short length scale for local
//! variation, and a periodic kernel for the weekly cycle, plus observation
//! noise on the diagonal. Length scales are fixed; the three amplitudes and
//! the noise sd are sampled by MCMC. Keeping length scales fixed lets the
//! unit kernel matrices be built once per fit, so each likelihood evaluation
//! is an assemble-and-Cholesky.

use nalgebra::{DMatrix, DVector};

use crate::corpus::{count_from_log, TrainingWindow, HORIZON};
use crate::error::{Error, Result};
use crate::forecast::ForecastDraws;
use crate::samplers::{
    adaptive_metropolis, dens, normal_draw, ChainSpec, PosteriorDraws, StreamRng,
};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GpConfig {
    /// Length scale of the trend kernel, in days.
    pub rho_long: f64,
    /// Length scale of the short-range kernel, in days.
    pub rho_short: f64,
    /// Length scale of the weekly periodic kernel.
    pub rho_week: f64,
    /// Period of the periodic kernel, in days.
    pub period: f64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            rho_long: 56.0,
            rho_short: 7.0,
            rho_week: 1.0,
            period: 7.0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_long > 0.0 && self.rho_short > 0.0 && self.rho_week > 0.0)
            || !(self.period > 0.0)
        {
            return Err(Error::config("gp length scales and period must be positive"));
        }
        Ok(())
    }
}

/// Squared-exponential kernel.
pub fn se_kernel(t1: f64, t2: f64, alpha: f64, rho: f64) -> f64 {
    let d = t1 - t2;
    alpha * alpha * (-d * d / (2.0 * rho * rho)).exp()
}

/// Periodic kernel with period `p`.
pub fn pe_kernel(t1: f64, t2: f64, alpha: f64, rho: f64, p: f64) -> f64 {
    let s = (std::f64::consts::PI * (t1 - t2).abs() / p).sin();
    alpha * alpha * (-2.0 * s * s / (2.0 * rho * rho)).exp()
}

/// Amplitudes and noise of the composite kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyper {
    pub alpha_long: f64,
    pub alpha_short: f64,
    pub alpha_week: f64,
    pub sigma: f64,
}

/// The three kernel matrices with unit amplitude and no noise, evaluated on
/// a pair of time grids. The composite covariance is a linear combination of
/// these, so they can be reused across hyperparameter values.
struct UnitKernels {
    long: DMatrix<f64>,
    short: DMatrix<f64>,
    week: DMatrix<f64>,
}

fn unit_kernels(rows: &[f64], cols: &[f64], cfg: &GpConfig) -> UnitKernels {
    let build = |f: &dyn Fn(f64, f64) -> f64| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| f(rows[i], cols[j]))
    };
    UnitKernels {
        long: build(&|a, b| se_kernel(a, b, 1.0, cfg.rho_long)),
        short: build(&|a, b| se_kernel(a, b, 1.0, cfg.rho_short)),
        week: build(&|a, b| pe_kernel(a, b, 1.0, cfg.rho_week, cfg.period)),
    }
}

fn assemble(units: &UnitKernels, hyper: &GpHyper, noise: bool) -> DMatrix<f64> {
    let (al, ash, aw) = (
        hyper.alpha_long * hyper.alpha_long,
        hyper.alpha_short * hyper.alpha_short,
        hyper.alpha_week * hyper.alpha_week,
    );
    let mut k = DMatrix::zeros(units.long.nrows(), units.long.ncols());
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            k[(i, j)] = al * units.long[(i, j)] + ash * units.short[(i, j)] + aw * units.week[(i, j)];
        }
    }
    if noise {
        let s2 = hyper.sigma * hyper.sigma;
        for i in 0..k.nrows().min(k.ncols()) {
            k[(i, i)] += s2;
        }
    }
    k
}

/// Builds the full composite covariance on one grid, noise included.
pub fn build_covariance(times: &[f64], hyper: &GpHyper, cfg: &GpConfig) -> DMatrix<f64> {
    let units = unit_kernels(times, times, cfg);
    assemble(&units, hyper, true)
}

const JITTER_LADDER: [f64; 4] = [0.0, 1e-8, 1e-6, 1e-4];

/// Cholesky with escalating diagonal jitter. Consumes the matrix.
fn cholesky_jittered(k: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    for &jitter in &JITTER_LADDER {
        let mut kj = k.clone();
        if jitter > 0.0 {
            for i in 0..kj.nrows() {
                kj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = kj.cholesky() {
            return Ok(chol);
        }
    }
    Err(Error::Numeric(
        "covariance not positive definite even with maximum jitter".into(),
    ))
}

/// Log marginal likelihood of centered observations under the composite
/// kernel, given a precomputed Cholesky factor.
fn log_marginal(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, y: &DVector<f64>) -> f64 {
    let n = y.len() as f64;
    let v = chol.solve(y);
    let quad = y.dot(&v);
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    -0.5 * quad - 0.5 * logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

#[derive(Debug, Clone)]
pub struct GpFit {
    /// Hyperparameter draws on the log scale:
    /// [log alpha_long, log alpha_short, log alpha_week, log sigma].
    pub posterior: PosteriorDraws,
    pub window: TrainingWindow,
    pub config: GpConfig,
    /// Training mean of log incidence, added back to predictions.
    pub y_mean: f64,
}

fn hyper_from_log(p: &[f64]) -> GpHyper {
    GpHyper {
        alpha_long: p[0].exp(),
        alpha_short: p[1].exp(),
        alpha_week: p[2].exp(),
        sigma: p[3].exp(),
    }
}

/// Fits the GP hyperparameters by MCMC on the marginal likelihood.
///
/// Priors (on the natural scale, sampled on logs with the Jacobian):
/// half-Student-t(3, 5) on the long amplitude, half-Student-t(7, 2) on the
/// short amplitude, half-Student-t(5, 2) on the weekly amplitude, and
/// half-Student-t(3, 1) on the noise sd.
pub fn fit_gp(
    window: &TrainingWindow,
    config: &GpConfig,
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<GpFit> {
    config.validate()?;
    let n = window.log_values.len();
    let y_mean = window.log_values.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, window.log_values.iter().map(|&v| v - y_mean));
    let times: Vec<f64> = (0..n).map(|t| t as f64).collect();
    let units = unit_kernels(&times, &times, config);

    let log_post = move |p: &[f64]| -> f64 {
        let hyper = hyper_from_log(p);
        let mut lp = dens::half_student_t_lpdf(hyper.alpha_long, 3.0, 5.0) + p[0];
        lp += dens::half_student_t_lpdf(hyper.alpha_short, 7.0, 2.0) + p[1];
        lp += dens::half_student_t_lpdf(hyper.alpha_week, 5.0, 2.0) + p[2];
        lp += dens::half_student_t_lpdf(hyper.sigma, 3.0, 1.0) + p[3];
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let k = assemble(&units, &hyper, true);
        match cholesky_jittered(k) {
            Ok(chol) => lp + log_marginal(&chol, &yc),
            Err(_) => f64::NEG_INFINITY,
        }
    };

    let sd = {
        let var = window
            .log_values
            .iter()
            .map(|&v| (v - y_mean).powi(2))
            .sum::<f64>()
            / (n as f64 - 1.0);
        var.sqrt().max(0.05)
    };
    let init = vec![sd.ln(), (0.5 * sd).ln(), (0.25 * sd).ln(), (0.2 * sd).ln()];
    let names = ["log_alpha_long", "log_alpha_short", "log_alpha_week", "log_sigma"];

    let posterior = adaptive_metropolis(log_post, &init, &names, spec, rng)?;
    Ok(GpFit {
        posterior,
        window: window.clone(),
        config: *config,
        y_mean,
    })
}

/// Posterior predictive mean and covariance at `future_times` given centered
/// training observations. Observation noise appears on the predictive
/// diagonal, so this describes future observations, not the latent function.
pub fn gp_conditional(
    train_times: &[f64],
    train_y: &[f64],
    future_times: &[f64],
    hyper: &GpHyper,
    cfg: &GpConfig,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if train_times.len() != train_y.len() {
        return Err(Error::config("training times and values differ in length"));
    }
    let units_xx = unit_kernels(train_times, train_times, cfg);
    let units_fx = unit_kernels(future_times, train_times, cfg);
    let units_ff = unit_kernels(future_times, future_times, cfg);
    conditional_from_units(&units_xx, &units_fx, &units_ff, train_y, hyper)
}

fn conditional_from_units(
    units_xx: &UnitKernels,
    units_fx: &UnitKernels,
    units_ff: &UnitKernels,
    train_y: &[f64],
    hyper: &GpHyper,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let kxx = assemble(units_xx, hyper, true);
    let kfx = assemble(units_fx, hyper, false);
    let kff = assemble(units_ff, hyper, true);
    let y = DVector::from_column_slice(train_y);
    let chol = cholesky_jittered(kxx)?;
    let mean = &kfx * chol.solve(&y);
    let cov = &kff - &kfx * chol.solve(&kfx.transpose());
    Ok((mean, cov))
}

/// Draws forecast sample paths: one joint multivariate normal path over the
/// horizon per retained hyperparameter draw, back-transformed to counts.
pub fn forecast_gp(fit: &GpFit, n_draws: usize, rng: &mut StreamRng) -> Result<ForecastDraws> {
    if n_draws == 0 {
        return Err(Error::config("need at least one draw"));
    }
    let window = &fit.window;
    let n = window.log_values.len();
    let train_times: Vec<f64> = (0..n).map(|t| t as f64).collect();
    let future_times: Vec<f64> = (1..=HORIZON).map(|h| (n - 1 + h) as f64).collect();
    let yc: Vec<f64> = window.log_values.iter().map(|&v| v - fit.y_mean).collect();

    let units_xx = unit_kernels(&train_times, &train_times, &fit.config);
    let units_fx = unit_kernels(&future_times, &train_times, &fit.config);
    let units_ff = unit_kernels(&future_times, &future_times, &fit.config);

    let mut rows = Vec::with_capacity(n_draws);
    for p in fit.posterior.thin(n_draws) {
        let hyper = hyper_from_log(p);
        let (mean, cov) = conditional_from_units(&units_xx, &units_fx, &units_ff, &yc, &hyper)?;
        let chol = cholesky_jittered(cov)?;
        let z = DVector::from_iterator(HORIZON, (0..HORIZON).map(|_| normal_draw(0.0, 1.0, rng)));
        let path = &mean + chol.l() * z;
        rows.push(
            path.iter()
                .map(|&v| count_from_log(v + fit.y_mean, window.population, window.log_offset))
                .collect(),
        );
    }
    ForecastDraws::new(
        "gp",
        window.region_id.clone(),
        window.origin,
        window.population,
        rows,
    )
}
