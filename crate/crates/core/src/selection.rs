//! Bootstrapped likelihood-ratio tests and forward-backward selection of the
//! number of univariate mixture components.

use std::collections::BTreeMap;

use crate::em::{self, EMConfig, EMFitResult};
use crate::error::{Error, Result};
use crate::exec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectionConfig {
    pub max_components: usize,
    pub bootstrap_samples: usize,
    pub forward_alpha: f64,
    pub backward_alpha: f64,
    pub em: EMConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            max_components: 5,
            bootstrap_samples: 100,
            forward_alpha: 0.25,
            backward_alpha: 0.25,
            em: EMConfig::default(),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_components == 0 || self.bootstrap_samples == 0 {
            return Err(Error::Domain("component and bootstrap counts must be positive".into()));
        }
        for a in [self.forward_alpha, self.backward_alpha] {
            if !(a > 0.0 && a < 1.0) {
                return Err(Error::Domain(format!("alpha {a} outside (0,1)")));
            }
        }
        self.em.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Backward,
}

/// Outcome of one bootstrapped LRT.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapOutcome {
    pub lambda_obs: f64,
    pub p_value: f64,
    /// Samples that produced a nonnegative statistic.
    pub valid_samples: usize,
    /// Statistic per bootstrap sample; failed fits are recorded as -1.
    pub lambdas: Vec<f64>,
}

impl BootstrapOutcome {
    /// Recomputes the p-value from the stored statistics.
    pub fn from_lambdas(lambda_obs: f64, lambdas: Vec<f64>) -> Self {
        let valid = lambdas.iter().filter(|&&l| l >= 0.0).count();
        let exceed = lambdas.iter().filter(|&&l| l > 0.0 && l >= lambda_obs).count();
        Self {
            lambda_obs,
            p_value: (1 + exceed) as f64 / (valid + 1) as f64,
            valid_samples: valid,
            lambdas,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrtRecord {
    pub h0: usize,
    pub h1: usize,
    pub lambda_obs: f64,
    pub p_value: f64,
    pub alpha_used: f64,
    pub direction: Direction,
    pub rejected: bool,
    pub valid_samples: usize,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionTrace {
    pub tests: Vec<LrtRecord>,
    pub chosen_g: usize,
    pub fits_by_g: BTreeMap<usize, EMFitResult>,
}

/// λ = −2(LL0 − LL1).
pub fn lrt_statistic(ll0: f64, ll1: f64) -> f64 {
    -2.0 * (ll0 - ll1)
}

/// Fits 1..=max_g components to `data`, each seeded from the previous fit
/// with three times the usual start count. A fit whose log-likelihood falls
/// below its predecessor is an error.
pub fn fit_chain(data: &[f64], max_g: usize, cfg: &EMConfig, seed: u64) -> Result<Vec<EMFitResult>> {
    let mut fits: Vec<EMFitResult> = Vec::with_capacity(max_g);
    for g in 1..=max_g {
        let fit = match fits.last() {
            None => em::multi_start_fit(data, 1, cfg, None, seed)?,
            Some(prev) => {
                let starts = 3 * cfg.starts_per_component * (g - 1);
                em::multi_start_fit_with(data, g, cfg, &prev.mixture, starts, exec::child_seed(seed, g as u64))?
            }
        };
        if let Some(prev) = fits.last() {
            if fit.log_likelihood < prev.log_likelihood {
                return Err(Error::LikelihoodDecreased {
                    smaller_g: g - 1,
                    larger_g: g,
                    ll_small: prev.log_likelihood,
                    ll_large: fit.log_likelihood,
                });
            }
        }
        fits.push(fit);
    }
    Ok(fits)
}

/// Bootstrapped LRT of `h0_fit.len()` vs `h1` components given the fits to
/// the original data.
///
/// Each sample is drawn from the H0 fit. Its H0 fit is seeded from the
/// sample's one-component MLE and its H1 fit from its H0 fit.
pub fn bootstrap_lrt_with_fits(
    data: &[f64],
    h0_fit: &EMFitResult,
    h1_fit: &EMFitResult,
    samples: usize,
    cfg: &EMConfig,
    seed: u64,
) -> Result<BootstrapOutcome> {
    let g0 = h0_fit.mixture.len();
    let g1 = h1_fit.mixture.len();
    if g0 >= g1 {
        return Err(Error::Domain(format!("need h0 < h1, got {g0} vs {g1}")));
    }
    if samples == 0 {
        return Err(Error::Domain("bootstrap sample count must be positive".into()));
    }
    let lambda_obs = lrt_statistic(h0_fit.log_likelihood, h1_fit.log_likelihood);
    let n = data.len();
    let null = &h0_fit.mixture;
    let lambdas = exec::map_indexed(samples, |b| {
        let sample_seed = exec::child_seed(seed, b as u64);
        let mut rng = exec::stream_rng(sample_seed, 0);
        let sample: Vec<f64> = (0..n).map(|_| em::sample_mixture(null, &mut rng)).collect();
        let base = match em::normal_mle(&sample) {
            Ok(m) => m,
            Err(_) => return -1.0,
        };
        let fit0 = match em::multi_start_fit(&sample, g0, cfg, Some(&base), exec::child_seed(sample_seed, 1)) {
            Ok(f) => f,
            Err(_) => return -1.0,
        };
        match em::multi_start_fit(&sample, g1, cfg, Some(&fit0.mixture), exec::child_seed(sample_seed, 2)) {
            Ok(fit1) => lrt_statistic(fit0.log_likelihood, fit1.log_likelihood),
            Err(_) => -1.0,
        }
    });
    Ok(BootstrapOutcome::from_lambdas(lambda_obs, lambdas))
}

/// Bootstrapped LRT of `g0` vs `g1` components, fitting the original data first.
pub fn bootstrap_lrt(data: &[f64], g0: usize, g1: usize, samples: usize, cfg: &EMConfig, seed: u64) -> Result<BootstrapOutcome> {
    if g0 == 0 || g0 >= g1 {
        return Err(Error::Domain(format!("need 1 <= h0 < h1, got {g0} vs {g1}")));
    }
    let fits = fit_chain(data, g1, cfg, seed)?;
    bootstrap_lrt_with_fits(data, &fits[g0 - 1], &fits[g1 - 1], samples, cfg, exec::child_seed(seed, 0xB007))
}

/// Forward-backward search driven by an arbitrary test function.
///
/// `test(h0, h1)` returns the bootstrap outcome for that pair; each pair is
/// run at most once and reused afterwards. Returns the records in the order
/// the decisions were taken and the chosen component count.
pub fn forward_backward<F>(max_components: usize, forward_alpha: f64, backward_alpha: f64, mut test: F) -> Result<(Vec<LrtRecord>, usize)>
where
    F: FnMut(usize, usize) -> Result<BootstrapOutcome>,
{
    let mut cache: BTreeMap<(usize, usize), BootstrapOutcome> = BTreeMap::new();
    let mut records = Vec::new();
    let mut run = |h0: usize, h1: usize, alpha: f64, direction: Direction, records: &mut Vec<LrtRecord>| -> Result<bool> {
        if !cache.contains_key(&(h0, h1)) {
            let outcome = test(h0, h1)?;
            cache.insert((h0, h1), outcome);
        }
        let o = &cache[&(h0, h1)];
        let rejected = o.p_value <= alpha;
        records.push(LrtRecord {
            h0,
            h1,
            lambda_obs: o.lambda_obs,
            p_value: o.p_value,
            alpha_used: alpha,
            direction,
            rejected,
            valid_samples: o.valid_samples,
            lambdas: o.lambdas.clone(),
        });
        Ok(rejected)
    };

    let mut basis = 1;
    for h1 in 2..=max_components {
        if run(basis, h1, forward_alpha, Direction::Forward, &mut records)? {
            basis = h1;
        }
    }
    let mut chosen = basis;
    let mut h0 = basis;
    while h0 > 1 {
        h0 -= 1;
        if run(h0, chosen, backward_alpha, Direction::Backward, &mut records)? {
            break;
        }
        chosen = h0;
    }
    Ok((records, chosen))
}

/// Selects the number of components for one asset.
pub fn select_components(data: &[f64], cfg: &SelectionConfig, seed: u64) -> Result<SelectionTrace> {
    cfg.validate()?;
    if data.len() < 3 * cfg.max_components {
        return Err(Error::Domain(format!(
            "{} observations are too few for {} components",
            data.len(),
            cfg.max_components
        )));
    }
    let fits = fit_chain(data, cfg.max_components, &cfg.em, seed)?;
    let (tests, chosen_g) = forward_backward(cfg.max_components, cfg.forward_alpha, cfg.backward_alpha, |h0, h1| {
        let test_seed = exec::child_seed(seed, ((h0 as u64) << 16) | h1 as u64);
        bootstrap_lrt_with_fits(data, &fits[h0 - 1], &fits[h1 - 1], cfg.bootstrap_samples, &cfg.em, test_seed)
    })?;
    let fits_by_g = fits.into_iter().enumerate().map(|(i, f)| (i + 1, f)).collect();
    Ok(SelectionTrace { tests, chosen_g, fits_by_g })
}
