//! Multi-start EM for univariate normal mixtures under a variance-ratio bound.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec;
use crate::stats::{mixture_pdf, normal_pdf_unchecked, Component, UnivariateMixture};

/// Log-likelihood assigned to aborted fits so they never win an argmax.
pub const LL_SENTINEL: f64 = -3_486_784_401.0; // -9^10

/// Attempts allowed when regenerating a random start.
pub const START_RETRY_BUDGET: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EMConfig {
    /// Bound on max(std)/min(std); the variance-ratio bound is its square.
    pub std_ratio_bound: f64,
    pub epsilon: f64,
    pub max_iters: u64,
    /// A g-component fit runs `starts_per_component * (g - 1)` random starts.
    pub starts_per_component: usize,
}

impl Default for EMConfig {
    fn default() -> Self {
        Self {
            std_ratio_bound: 16.0,
            epsilon: 1e-15,
            max_iters: 1_000_000_000,
            starts_per_component: 200,
        }
    }
}

impl EMConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_ratio_bound >= 1.0) {
            return Err(Error::Domain("std_ratio_bound must be >= 1".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain("epsilon must be positive".into()));
        }
        if self.max_iters == 0 || self.starts_per_component == 0 {
            return Err(Error::Domain("iteration and start counts must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitStatus {
    Converged,
    VarianceRatioViolated,
    MaxIters,
    DegenerateWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EMFitResult {
    pub mixture: UnivariateMixture,
    pub log_likelihood: f64,
    pub iterations: u64,
    pub status: FitStatus,
}

impl EMFitResult {
    pub fn converged(&self) -> bool {
        self.status == FitStatus::Converged
    }

    fn aborted(mixture: UnivariateMixture, iterations: u64, status: FitStatus) -> Self {
        Self {
            mixture,
            log_likelihood: LL_SENTINEL,
            iterations,
            status,
        }
    }
}

/// Sum of log mixture densities. A zero density at any point is reported as
/// [`Error::ZeroDensity`].
pub fn log_likelihood(data: &[f64], mix: &UnivariateMixture) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Domain("empty data".into()));
    }
    let mut ll = 0.0;
    for (i, &x) in data.iter().enumerate() {
        let f = mixture_pdf(x, mix);
        if !(f > 0.0) {
            return Err(Error::ZeroDensity { index: i });
        }
        ll += f.ln();
    }
    Ok(ll)
}

/// Posterior component membership probabilities of one observation.
pub fn posterior_probs(x: f64, mix: &UnivariateMixture) -> Result<Vec<f64>> {
    let terms: Vec<f64> = mix.components().iter().map(|c| c.weight * normal_pdf_unchecked(x, c.mean, c.std)).collect();
    let total: f64 = terms.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroDensity { index: 0 });
    }
    Ok(terms.into_iter().map(|t| t / total).collect())
}

/// Draws one value from a univariate mixture.
pub fn sample_mixture<R: Rng + ?Sized>(mix: &UnivariateMixture, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    let comps = mix.components();
    let mut acc = 0.0;
    let mut pick = comps.len() - 1;
    for (i, c) in comps.iter().enumerate() {
        acc += c.weight;
        if u <= acc {
            pick = i;
            break;
        }
    }
    let z: f64 = StandardNormal.sample(rng);
    comps[pick].mean + comps[pick].std * z
}

/// Closed-form one-component MLE (std divides by n).
pub fn normal_mle(data: &[f64]) -> Result<UnivariateMixture> {
    if data.is_empty() {
        return Err(Error::Domain("empty data".into()));
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Domain("data have zero variance".into()));
    }
    UnivariateMixture::normal(mean, var.sqrt())
}

/// Random start: means drawn from `seed_mix`, observations attached to the
/// nearest mean, weights and stds taken from the attached groups.
pub fn random_start<R: Rng + ?Sized>(data: &[f64], g: usize, seed_mix: &UnivariateMixture, std_ratio_bound: f64, rng: &mut R) -> Result<UnivariateMixture> {
    if g == 0 || data.is_empty() {
        return Err(Error::Domain("need g >= 1 and nonempty data".into()));
    }
    let n = data.len();
    for _ in 0..START_RETRY_BUDGET {
        let means: Vec<f64> = (0..g).map(|_| sample_mixture(seed_mix, rng)).collect();
        let mut counts = vec![0usize; g];
        let mut ssq = vec![0.0; g];
        for &x in data {
            let mut best = 0;
            let mut dist = (x - means[0]).abs();
            for (i, &m) in means.iter().enumerate().skip(1) {
                let d = (x - m).abs();
                if d < dist {
                    dist = d;
                    best = i;
                }
            }
            counts[best] += 1;
            ssq[best] += dist * dist;
        }
        if counts.contains(&0) {
            continue;
        }
        let stds: Vec<f64> = (0..g).map(|i| (ssq[i] / counts[i] as f64).sqrt()).collect();
        if stds.iter().any(|&s| !(s > 0.0)) {
            continue;
        }
        let max = stds.iter().cloned().fold(f64::MIN, f64::max);
        let min = stds.iter().cloned().fold(f64::MAX, f64::min);
        if max > std_ratio_bound * min {
            continue;
        }
        let mut weights: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let head: f64 = weights[..g - 1].iter().sum();
        weights[g - 1] = 1.0 - head;
        if let Ok(mix) = UnivariateMixture::from_parts(&weights, &means, &stds) {
            return Ok(mix);
        }
    }
    Err(Error::StartInfeasible { attempts: START_RETRY_BUDGET })
}

/// Runs EM from `start` until the relative gain drops below epsilon.
pub fn em_fit(data: &[f64], start: &UnivariateMixture, cfg: &EMConfig) -> EMFitResult {
    em_fit_observed(data, start, cfg, |_, _| {})
}

/// As [`em_fit`], calling `observe(iteration, ll)` after the start and after
/// every completed iteration.
pub fn em_fit_observed<F: FnMut(u64, f64)>(data: &[f64], start: &UnivariateMixture, cfg: &EMConfig, mut observe: F) -> EMFitResult {
    let g = start.len();
    if start.std_ratio() > cfg.std_ratio_bound {
        return EMFitResult::aborted(start.clone(), 0, FitStatus::VarianceRatioViolated);
    }
    let mut old_ll = match log_likelihood(data, start) {
        Ok(v) => v,
        Err(_) => return EMFitResult::aborted(start.clone(), 0, FitStatus::DegenerateWeight),
    };
    observe(0, old_ll);
    let n = data.len();
    let nf = n as f64;
    let mut weights = start.weights();
    let mut means = start.means();
    let mut stds = start.stds();
    let mut post = vec![0.0; n * g];
    let mut iter = 0u64;
    loop {
        iter += 1;
        // E-step
        for (t, &x) in data.iter().enumerate() {
            let row = &mut post[t * g..(t + 1) * g];
            let mut total = 0.0;
            for i in 0..g {
                row[i] = weights[i] * normal_pdf_unchecked(x, means[i], stds[i]);
                total += row[i];
            }
            if !(total > 0.0) {
                return EMFitResult::aborted(current(&weights, &means, &stds, start), iter, FitStatus::DegenerateWeight);
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        // M-step
        let mut head = 0.0;
        for i in 0..g {
            let w = if i + 1 < g {
                let w = (0..n).map(|t| post[t * g + i]).sum::<f64>() / nf;
                head += w;
                w
            } else {
                1.0 - head
            };
            if g > 1 && !(w > 0.0 && w < 1.0) {
                return EMFitResult::aborted(current(&weights, &means, &stds, start), iter, FitStatus::DegenerateWeight);
            }
            weights[i] = w;
            let denom = w * nf;
            let mean = (0..n).map(|t| post[t * g + i] * data[t]).sum::<f64>() / denom;
            let var = (0..n).map(|t| post[t * g + i] * (data[t] - mean).powi(2)).sum::<f64>() / denom;
            if !(var > 0.0) {
                return EMFitResult::aborted(current(&weights, &means, &stds, start), iter, FitStatus::VarianceRatioViolated);
            }
            means[i] = mean;
            stds[i] = var.sqrt();
        }
        let max = stds.iter().cloned().fold(f64::MIN, f64::max);
        let min = stds.iter().cloned().fold(f64::MAX, f64::min);
        if max > cfg.std_ratio_bound * min {
            return EMFitResult::aborted(current(&weights, &means, &stds, start), iter, FitStatus::VarianceRatioViolated);
        }
        let mix = match UnivariateMixture::from_parts(&weights, &means, &stds) {
            Ok(m) => m,
            Err(_) => return EMFitResult::aborted(start.clone(), iter, FitStatus::DegenerateWeight),
        };
        let new_ll = match log_likelihood(data, &mix) {
            Ok(v) => v,
            Err(_) => return EMFitResult::aborted(mix, iter, FitStatus::DegenerateWeight),
        };
        observe(iter, new_ll);
        if new_ll - old_ll <= cfg.epsilon * old_ll.abs() {
            return EMFitResult {
                mixture: mix,
                log_likelihood: new_ll,
                iterations: iter,
                status: FitStatus::Converged,
            };
        }
        if iter >= cfg.max_iters {
            return EMFitResult::aborted(mix, iter, FitStatus::MaxIters);
        }
        old_ll = new_ll;
    }
}

fn current(weights: &[f64], means: &[f64], stds: &[f64], fallback: &UnivariateMixture) -> UnivariateMixture {
    UnivariateMixture::from_parts(weights, means, stds).unwrap_or_else(|_| fallback.clone())
}

/// Best converged fit over `n_starts` random starts seeded from `seed_mix`.
///
/// Start `i` uses its own RNG stream derived from `(seed, i)`; ties on
/// log-likelihood go to the lowest start index.
pub fn multi_start_fit_with(data: &[f64], g: usize, cfg: &EMConfig, seed_mix: &UnivariateMixture, n_starts: usize, seed: u64) -> Result<EMFitResult> {
    if g == 0 {
        return Err(Error::Domain("g must be at least 1".into()));
    }
    if g == 1 {
        let mix = normal_mle(data)?;
        let ll = log_likelihood(data, &mix)?;
        return Ok(EMFitResult {
            mixture: mix,
            log_likelihood: ll,
            iterations: 0,
            status: FitStatus::Converged,
        });
    }
    let runs = exec::map_indexed(n_starts, |i| {
        let mut rng = exec::stream_rng(seed, i as u64);
        random_start(data, g, seed_mix, cfg.std_ratio_bound, &mut rng)
            .ok()
            .map(|start| em_fit(data, &start, cfg))
    });
    let mut best: Option<EMFitResult> = None;
    for run in runs.into_iter().flatten() {
        if run.converged() && best.as_ref().is_none_or(|b| run.log_likelihood > b.log_likelihood) {
            best = Some(run);
        }
    }
    best.ok_or(Error::NoLocalOptimum { components: g })
}

/// Best converged g-component fit using `starts_per_component * (g - 1)`
/// starts seeded from `seed_mix`, or from the one-component MLE when absent.
pub fn multi_start_fit(data: &[f64], g: usize, cfg: &EMConfig, seed_mix: Option<&UnivariateMixture>, seed: u64) -> Result<EMFitResult> {
    let owned;
    let seed_mix = match seed_mix {
        Some(m) => m,
        None => {
            owned = normal_mle(data)?;
            &owned
        }
    };
    let n_starts = cfg.starts_per_component * g.saturating_sub(1);
    multi_start_fit_with(data, g, cfg, seed_mix, n_starts, seed)
}

/// Builds a mixture whose component `k` is pinned to observation `j` with the
/// given tiny std. Used to exhibit the unbounded likelihood.
pub fn degenerate_start(data: &[f64], j: usize, tiny_std: f64) -> Result<UnivariateMixture> {
    let rest: Vec<f64> = data.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, &x)| x).collect();
    let base = normal_mle(&rest)?;
    let b = base.components()[0];
    let w = 1.0 / data.len() as f64;
    UnivariateMixture::new(vec![Component::new(w, data[j], tiny_std), Component::new(1.0 - w, b.mean, b.std)])
}
