//! Random number plumbing and the MCMC engine shared by all models.
//!
//! Randomness is organized as named substreams: every task derives its
//! generator from a global seed plus a list of string labels, so results are
//! reproducible regardless of scheduling or worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type StreamRng = ChaCha12Rng;

/// Derives a generator from `seed` and an ordered list of labels.
///
/// The (seed, labels) pair fully determines the stream. Distinct labels give
/// streams that are independent for all practical purposes.
pub fn seeded_rng(seed: u64, labels: &[&str]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    for label in labels {
        hasher.update([0x1f]);
        hasher.update(label.as_bytes());
    }
    ChaCha12Rng::from_seed(hasher.finalize().into())
}

/// Upper bound on Poisson means; beyond this the draw saturates. Daily case
/// counts anywhere near this are out of the model's domain anyway.
const MAX_POISSON_MEAN: f64 = 1e12;

/// Poisson draw returned as a whole-valued f64. Mean <= 0 yields 0.
pub fn poisson_draw(mean: f64, rng: &mut StreamRng) -> f64 {
    if !(mean > 0.0) {
        return 0.0;
    }
    let mean = mean.min(MAX_POISSON_MEAN);
    let dist = Poisson::new(mean).expect("positive finite mean");
    let draw: f64 = dist.sample(rng);
    draw.round()
}

pub fn normal_draw(mean: f64, sd: f64, rng: &mut StreamRng) -> f64 {
    mean + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
}

/// Laplace(0, scale) draw by inverse CDF.
pub fn laplace_draw(scale: f64, rng: &mut StreamRng) -> f64 {
    let u: f64 = rng.random_range(-0.5..0.5);
    // The log argument lies in (0, 1]; floor it so a boundary draw cannot
    // produce -inf.
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
}

/// `n` draws from Gamma(shape, rate), rate parameterization.
pub fn sample_gamma(shape: f64, rate: f64, n: usize, rng: &mut StreamRng) -> Result<Vec<f64>> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(Error::Numeric(format!(
            "gamma parameters must be positive (shape {shape}, rate {rate})"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numeric(format!("gamma sampler: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}

/// One negative binomial draw with the given mean and dispersion, via the
/// gamma-Poisson mixture. Variance is mean + mean^2 / dispersion.
pub fn negbin_draw(mean: f64, dispersion: f64, rng: &mut StreamRng) -> Result<f64> {
    if !(dispersion > 0.0) {
        return Err(Error::Numeric(format!(
            "dispersion must be positive (got {dispersion})"
        )));
    }
    if !(mean > 0.0) {
        return Ok(0.0);
    }
    let dist = Gamma::new(dispersion, mean / dispersion)
        .map_err(|e| Error::Numeric(format!("negbin mixing: {e}")))?;
    let lambda: f64 = dist.sample(rng);
    Ok(poisson_draw(lambda, rng))
}

/// `n` negative binomial draws. See [`negbin_draw`].
pub fn sample_negbin(mean: f64, dispersion: f64, n: usize, rng: &mut StreamRng) -> Result<Vec<u64>> {
    (0..n)
        .map(|_| negbin_draw(mean, dispersion, rng).map(|x| x as u64))
        .collect()
}

/// Log densities used in model posteriors. All return -inf outside support.
pub mod dens {
    use statrs::function::gamma::ln_gamma;

    const LN_2PI: f64 = 1.8378770664093453;

    pub fn normal_lpdf(x: f64, mean: f64, sd: f64) -> f64 {
        let z = (x - mean) / sd;
        -0.5 * (LN_2PI + z * z) - sd.ln()
    }

    pub fn half_normal_lpdf(x: f64, sd: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        std::f64::consts::LN_2 + normal_lpdf(x, 0.0, sd)
    }

    pub fn student_t_lpdf(x: f64, nu: f64, mean: f64, sd: f64) -> f64 {
        let z = (x - mean) / sd;
        ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - sd.ln()
            - (nu + 1.0) / 2.0 * (1.0 + z * z / nu).ln()
    }

    pub fn half_student_t_lpdf(x: f64, nu: f64, sd: f64) -> f64 {
        if x < 0.0 {
            return f64::NEG_INFINITY;
        }
        std::f64::consts::LN_2 + student_t_lpdf(x, nu, 0.0, sd)
    }

    pub fn laplace_lpdf(x: f64, mean: f64, scale: f64) -> f64 {
        -(2.0 * scale).ln() - (x - mean).abs() / scale
    }

    pub fn gamma_lpdf(x: f64, shape: f64, rate: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
    }

    pub fn poisson_lpmf(y: f64, mean: f64) -> f64 {
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        if mean <= 0.0 {
            return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        y * mean.ln() - mean - ln_gamma(y + 1.0)
    }

    /// Mean/dispersion parameterization; variance = mean + mean^2/dispersion.
    pub fn neg_binomial_lpmf(y: f64, mean: f64, dispersion: f64) -> f64 {
        if y < 0.0 {
            return f64::NEG_INFINITY;
        }
        if mean <= 0.0 {
            return if y == 0.0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let phi = dispersion;
        ln_gamma(y + phi) - ln_gamma(phi) - ln_gamma(y + 1.0)
            + phi * (phi.ln() - (phi + mean).ln())
            + y * (mean.ln() - (phi + mean).ln())
    }
}

/// MCMC run shape. Retained draws = chains * (iterations - warmup).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ChainSpec {
    pub chains: usize,
    pub iterations: usize,
    pub warmup: usize,
}

impl Default for ChainSpec {
    fn default() -> Self {
        ChainSpec {
            chains: 4,
            iterations: 1000,
            warmup: 500,
        }
    }
}

impl ChainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::config("need at least one chain"));
        }
        if self.warmup >= self.iterations {
            return Err(Error::config(
                "warmup must be shorter than the iteration count",
            ));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        self.iterations - self.warmup
    }

    pub fn total_retained(&self) -> usize {
        self.chains * self.retained_per_chain()
    }
}

/// Posterior draws with convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// Row-major: `total_retained` rows, one parameter per column. Chains are
    /// concatenated in order.
    pub draws: Vec<Vec<f64>>,
    /// Post-warmup acceptance fraction per chain.
    pub acceptance: Vec<f64>,
    /// Split-chain potential scale reduction per parameter.
    pub rhat: Vec<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[j]).collect()
    }

    pub fn mean(&self, j: usize) -> f64 {
        self.column(j).iter().sum::<f64>() / self.len() as f64
    }

    /// Evenly spaced rows to reduce (or cycle to extend) the draw count.
    pub fn thin(&self, target: usize) -> Vec<&[f64]> {
        thin_indices(self.len(), target)
            .into_iter()
            .map(|i| self.draws[i].as_slice())
            .collect()
    }
}

/// Deterministic thinning indices: evenly spaced when shrinking, cycling when
/// the target exceeds the source length.
pub fn thin_indices(len: usize, target: usize) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    if target <= len {
        (0..target).map(|i| i * len / target).collect()
    } else {
        (0..target).map(|i| i % len).collect()
    }
}

/// Split-chain potential scale reduction for one parameter.
///
/// Each chain's sequence is halved, giving 2m sequences; returns
/// sqrt(((n-1)/n W + B/n) / W). Returns exactly 1.0 when every chain produced
/// a bit-identical sequence. Degenerate cases (zero within-sequence variance
/// with spread means) return a large finite value rather than infinity.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    if chains.is_empty() || chains[0].len() < 4 {
        return 1.0;
    }
    if chains.windows(2).all(|pair| pair[0] == pair[1]) {
        return 1.0;
    }
    let half = chains[0].len() / 2;
    let mut seqs: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for chain in chains {
        let n = chain.len();
        seqs.push(&chain[n - 2 * half..n - half]);
        seqs.push(&chain[n - half..]);
    }
    let n = half as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs
        .iter()
        .map(|s| s.iter().sum::<f64>() / n)
        .collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| s.iter().map(|&x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0))
        .collect();
    let w: f64 = vars.iter().sum::<f64>() / m;
    let grand = means.iter().sum::<f64>() / m;
    let b: f64 = n * means.iter().map(|&mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let var_plus = (n - 1.0) / n * w + b / n;
    if w <= 0.0 {
        return if var_plus <= 0.0 { 1.0 } else { 1e6 };
    }
    let rhat = (var_plus / w).sqrt();
    if rhat.is_finite() {
        rhat
    } else {
        1e6
    }
}

/// Component-wise random-walk Metropolis with diminishing scale adaptation.
///
/// Proposal scales adapt toward 0.234 acceptance with step size shrinking as
/// 1/sqrt(iteration); adaptation stops at the end of warmup, so the retained
/// draws come from a fixed kernel. Chains run from seeds drawn off `rng` and
/// are concatenated in order.
pub fn adaptive_metropolis<F>(
    log_posterior: F,
    init: &[f64],
    names: &[&str],
    spec: &ChainSpec,
    rng: &mut StreamRng,
) -> Result<PosteriorDraws>
where
    F: Fn(&[f64]) -> f64,
{
    spec.validate()?;
    if init.len() != names.len() {
        return Err(Error::config("init and names lengths differ"));
    }
    if init.iter().any(|x| !x.is_finite()) {
        return Err(Error::Sampler("non-finite initial point".into()));
    }
    let lp0 = log_posterior(init);
    if !lp0.is_finite() {
        return Err(Error::Sampler(format!(
            "log posterior not finite at the initial point (got {lp0})"
        )));
    }

    const TARGET_ACCEPT: f64 = 0.234;
    let p = init.len();
    let chain_seeds: Vec<u64> = (0..spec.chains).map(|_| rng.random()).collect();

    let mut all_rows: Vec<Vec<f64>> = Vec::with_capacity(spec.total_retained());
    let mut acceptance = Vec::with_capacity(spec.chains);
    let mut per_chain: Vec<Vec<Vec<f64>>> = Vec::with_capacity(spec.chains);
    let mut any_accept = false;

    for &chain_seed in &chain_seeds {
        let mut crng = ChaCha12Rng::seed_from_u64(chain_seed);
        let mut x = init.to_vec();
        let mut lp = lp0;
        let mut log_scale = vec![0.1f64.ln(); p];
        let mut kept: Vec<Vec<f64>> = Vec::with_capacity(spec.retained_per_chain());
        let mut accepted_post = 0usize;
        let mut proposals_post = 0usize;

        for iter in 1..=spec.iterations {
            let adapting = iter <= spec.warmup;
            for j in 0..p {
                let step = normal_draw(0.0, log_scale[j].exp(), &mut crng);
                let old = x[j];
                x[j] = old + step;
                let lp_new = log_posterior(&x);
                let log_alpha = lp_new - lp;
                let alpha = if log_alpha.is_nan() {
                    0.0
                } else {
                    log_alpha.min(0.0).exp()
                };
                let u: f64 = crng.random();
                if u < alpha {
                    lp = lp_new;
                    any_accept = true;
                    if !adapting {
                        accepted_post += 1;
                    }
                } else {
                    x[j] = old;
                }
                if !adapting {
                    proposals_post += 1;
                }
                if adapting {
                    log_scale[j] += (alpha - TARGET_ACCEPT) / (iter as f64).sqrt();
                }
            }
            if !adapting {
                kept.push(x.clone());
            }
        }
        acceptance.push(accepted_post as f64 / proposals_post.max(1) as f64);
        per_chain.push(kept);
    }

    if !any_accept {
        return Err(Error::Sampler(
            "no proposal was accepted in any chain; the target looks degenerate".into(),
        ));
    }

    let rhat: Vec<f64> = (0..p)
        .map(|j| {
            let cols: Vec<Vec<f64>> = per_chain
                .iter()
                .map(|kept| kept.iter().map(|row| row[j]).collect())
                .collect();
            split_rhat(&cols)
        })
        .collect();

    for kept in &mut per_chain {
        all_rows.append(kept);
    }

    Ok(PosteriorDraws {
        names: names.iter().map(|s| s.to_string()).collect(),
        draws: all_rows,
        acceptance,
        rhat,
    })
}
