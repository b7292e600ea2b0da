//! Normal and normal-mixture densities, moments and information criteria.

use libm::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// One normal component of a univariate mixture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

impl Component {
    pub fn new(weight: f64, mean: f64, std: f64) -> Self {
        Self { weight, mean, std }
    }
}

/// Finite normal mixture on the real line.
///
/// Components are kept sorted by ascending mean, ties by ascending std.
#[derive(Debug, Clone, PartialEq)]
pub struct UnivariateMixture {
    components: Vec<Component>,
}

impl UnivariateMixture {
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        for c in &components {
            if !(c.weight > 0.0 && c.weight <= 1.0) {
                return Err(Error::InvalidMixture(format!("weight {} outside (0,1]", c.weight)));
            }
            if !(c.std > 0.0) || !c.std.is_finite() {
                return Err(Error::InvalidMixture(format!("std {} not positive", c.std)));
            }
            if !c.mean.is_finite() {
                return Err(Error::InvalidMixture("non-finite mean".into()));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMixture(format!("weights sum to {total}")));
        }
        components.sort_by(|a, b| a.mean.total_cmp(&b.mean).then(a.std.total_cmp(&b.std)));
        Ok(Self { components })
    }

    /// Single normal component.
    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![Component::new(1.0, mean, std)])
    }

    /// Builds from parallel slices of weights, means and stds.
    pub fn from_parts(weights: &[f64], means: &[f64], stds: &[f64]) -> Result<Self> {
        if weights.len() != means.len() || means.len() != stds.len() {
            return Err(Error::InvalidMixture("parameter lengths differ".into()));
        }
        Self::new(weights.iter().zip(means).zip(stds).map(|((&w, &m), &s)| Component::new(w, m, s)).collect())
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.mean).collect()
    }

    pub fn stds(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.std).collect()
    }

    /// max(std) / min(std) across components.
    pub fn std_ratio(&self) -> f64 {
        let max = self.components.iter().map(|c| c.std).fold(f64::MIN, f64::max);
        let min = self.components.iter().map(|c| c.std).fold(f64::MAX, f64::min);
        max / min
    }
}

/// Summary moments of a distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub mean: f64,
    pub std: f64,
    pub skewness: f64,
    pub kurtosis: f64,
}

/// Information criteria for a fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ICReport {
    pub log_likelihood: f64,
    pub free_params: usize,
    pub sample_size: usize,
    pub aic: f64,
    pub aicc: f64,
    pub bic: f64,
}

fn check_std(std: f64) -> Result<()> {
    if std > 0.0 && std.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("std must be positive, got {std}")))
    }
}

pub fn normal_pdf(x: f64, mean: f64, std: f64) -> Result<f64> {
    check_std(std)?;
    Ok(normal_pdf_unchecked(x, mean, std))
}

#[inline]
pub(crate) fn normal_pdf_unchecked(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    (-0.5 * z * z).exp() / (std * SQRT_2PI)
}

pub fn normal_cdf(x: f64, mean: f64, std: f64) -> Result<f64> {
    check_std(std)?;
    Ok(normal_cdf_unchecked(x, mean, std))
}

#[inline]
pub(crate) fn normal_cdf_unchecked(x: f64, mean: f64, std: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-(x - mean) / (std * std::f64::consts::SQRT_2))
}

pub fn mixture_pdf(x: f64, mix: &UnivariateMixture) -> f64 {
    mix.components.iter().map(|c| c.weight * normal_pdf_unchecked(x, c.mean, c.std)).sum()
}

pub fn mixture_cdf(x: f64, mix: &UnivariateMixture) -> f64 {
    let v: f64 = mix.components.iter().map(|c| c.weight * normal_cdf_unchecked(x, c.mean, c.std)).sum();
    v.clamp(0.0, 1.0)
}

pub fn mixture_moments(mix: &UnivariateMixture) -> MomentSummary {
    let (mut e1, mut e2, mut e3, mut e4) = (0.0, 0.0, 0.0, 0.0);
    for c in &mix.components {
        let (m, v) = (c.mean, c.std * c.std);
        e1 += c.weight * m;
        e2 += c.weight * (v + m * m);
        e3 += c.weight * (m.powi(3) + 3.0 * m * v);
        e4 += c.weight * (m.powi(4) + 6.0 * m * m * v + 3.0 * v * v);
    }
    let var = e2 - e1 * e1;
    let std = var.sqrt();
    let skew = (e3 - 3.0 * e1 * e2 + 2.0 * e1.powi(3)) / std.powi(3);
    let kurt = (e4 - 4.0 * e1 * e3 + 6.0 * e1 * e1 * e2 - 3.0 * e1.powi(4)) / (var * var);
    MomentSummary {
        mean: e1,
        std,
        skewness: skew,
        kurtosis: kurt,
    }
}

pub fn information_criteria(log_likelihood: f64, free_params: usize, sample_size: usize) -> Result<ICReport> {
    if sample_size == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let k = free_params as f64;
    let n = sample_size as f64;
    if sample_size <= free_params + 2 {
        return Err(Error::Domain(format!(
            "AICC undefined for sample size {sample_size} with {free_params} parameters"
        )));
    }
    let aic = 2.0 * k - 2.0 * log_likelihood;
    let aicc = aic + 2.0 * (k + 1.0) * (k + 2.0) / (n - k - 2.0);
    let bic = -2.0 * log_likelihood + k * n.ln();
    Ok(ICReport {
        log_likelihood,
        free_params,
        sample_size,
        aic,
        aicc,
        bic,
    })
}

/// Free parameters of a g-component univariate mixture.
pub fn free_params_univariate(components: usize) -> usize {
    3 * components - 1
}

/// Free parameters of a fixed-marginal joint mixture.
///
/// Counts a mean and a std for every marginal component, the off-diagonal
/// covariances of every joint component, and the cell probabilities left free
/// by the marginal constraint system. Marginal weights are implied by the cell
/// probabilities and are not counted again.
pub fn free_params_joint(marginal_components: &[usize], joint_components: usize, constraint_rank: usize) -> usize {
    let n = marginal_components.len();
    let means_stds: usize = marginal_components.iter().map(|g| 2 * g).sum();
    let covs = joint_components * n * (n - 1) / 2;
    means_stds + covs + joint_components.saturating_sub(constraint_rank)
}

/// Predictive density of a future observation from a normal sample with mean
/// `sample_mean`, unbiased std `sample_std` and size `t`.
pub fn future_obs_density(x: f64, sample_mean: f64, sample_std: f64, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::Domain("sample size must be at least 2".into()));
    }
    check_std(sample_std)?;
    let nu = (t - 1) as f64;
    let scale = sample_std * (1.0 + 1.0 / t as f64).sqrt();
    let z = (x - sample_mean) / scale;
    let log_norm = ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln();
    let log_kernel = -(nu + 1.0) / 2.0 * (1.0 + z * z / nu).ln();
    Ok((log_norm + log_kernel).exp() / scale)
}
