//! Randomized damped Newton search over the off-diagonal covariances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::derivs::{factors, joint_log_likelihood, step2_gradient, step2_hessian};
use super::model::JointMixture;
use super::pd::{is_positive_definite, ridge_repair, PdThresholds};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::ReturnsPanel;

/// Tasks per unit of `thread_multiplier`. Fixed rather than read from the
/// machine so that results do not depend on core count.
pub const TASKS_PER_MULTIPLIER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LMConfig {
    pub steps_per_thread: usize,
    pub thread_multiplier: usize,
    pub beat_pool: usize,
    pub ridge_mult_range: (f64, f64),
    pub pd: PdThresholds,
    pub convergence_scale: f64,
    pub max_rounds: usize,
}

impl Default for LMConfig {
    fn default() -> Self {
        Self {
            steps_per_thread: 1000,
            thread_multiplier: 2,
            beat_pool: 80,
            ridge_mult_range: (2.0, 10.0),
            pd: PdThresholds::default(),
            convergence_scale: 1e6,
            max_rounds: 10_000,
        }
    }
}

impl LMConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.ridge_mult_range;
        if self.steps_per_thread == 0 || self.thread_multiplier == 0 || self.beat_pool == 0 || !(lo > 0.0 && lo < hi) || !(self.convergence_scale > 0.0) {
            return Err(Error::Domain(format!("invalid LM config {self:?}")));
        }
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.thread_multiplier * TASKS_PER_MULTIPLIER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub params: DVector<f64>,
    pub log_likelihood: f64,
    pub repairs: usize,
}

/// Solves `(H + damping I) delta = -scale * g`, or `None` when the damped
/// matrix is numerically singular.
pub fn damped_step(gradient: &DVector<f64>, hessian: &DMatrix<f64>, damping: f64, scale: f64) -> Option<DVector<f64>> {
    let n = gradient.len();
    let m = hessian + DMatrix::identity(n, n) * damping;
    let svd = m.svd(true, true);
    let tol = 1e-14 * svd.singular_values.max();
    if svd.rank(tol) < n || !tol.is_finite() {
        return None;
    }
    svd.solve(&(-gradient * scale), tol).ok()
}

/// Applies new covariances, repairing any component that loses positive
/// definiteness, and scores the result.
pub fn evaluate_candidate(panel: &ReturnsPanel, model: &JointMixture, params: &DVector<f64>, ridge_mult: f64, pd: &PdThresholds) -> Option<Candidate> {
    let mut trial = model.clone();
    trial.set_covariances(params);
    let mut repairs = 0;
    for comp in trial.components_mut() {
        if !is_positive_definite(&comp.cov, pd).ok()? {
            comp.cov = ridge_repair(&comp.cov, ridge_mult, pd).ok()?;
            repairs += 1;
        }
    }
    let log_likelihood = joint_log_likelihood(panel, &trial).ok()?;
    Some(Candidate {
        params: trial.covariance_vector(),
        log_likelihood,
        repairs,
    })
}

fn magnitude_digits(hessian: &DMatrix<f64>) -> i32 {
    let max = hessian.amax();
    if max >= 1.0 {
        max.log10().floor() as i32 + 1
    } else {
        1
    }
}

/// One random damped step from `model`.
#[allow(clippy::too_many_arguments)]
pub fn lm_candidate_step<R: Rng + ?Sized>(
    panel: &ReturnsPanel,
    model: &JointMixture,
    gradient: &DVector<f64>,
    hessian: &DMatrix<f64>,
    ridge_mult: f64,
    cfg: &LMConfig,
    rng: &mut R,
) -> Option<Candidate> {
    let top = magnitude_digits(hessian) + 2;
    let exponent = rng.random_range(1..=top);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let damping = sign * (1.0 - rng.random::<f64>()) * 10f64.powi(exponent);
    let scale = 1.0 - rng.random::<f64>();
    let delta = damped_step(gradient, hessian, damping, scale)?;
    let params = model.covariance_vector() + delta;
    evaluate_candidate(panel, model, &params, ridge_mult, &cfg.pd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub model: JointMixture,
    pub log_likelihood: f64,
    pub beats: usize,
    pub repairs: usize,
}

/// Runs every task from the same base point and picks one improving
/// candidate at random, weighted by its likelihood gain.
pub fn lm_round(panel: &ReturnsPanel, model: &JointMixture, current_ll: f64, cfg: &LMConfig, seed: u64) -> Result<Option<RoundResult>> {
    let gradient = step2_gradient(panel, model)?;
    let hessian = step2_hessian(panel, model)?;
    let tasks = cfg.tasks();
    let bests: Vec<Option<Candidate>> = exec::map_indexed(tasks, |task| {
        let mut rng = exec::stream_rng(seed, task as u64);
        let mult = rng.random_range(cfg.ridge_mult_range.0..=cfg.ridge_mult_range.1);
        let mut best: Option<Candidate> = None;
        for _ in 0..cfg.steps_per_thread {
            if let Some(c) = lm_candidate_step(panel, model, &gradient, &hessian, mult, cfg, &mut rng) {
                let leads = best.as_ref().is_none_or(|b| c.log_likelihood > b.log_likelihood);
                if c.log_likelihood > current_ll && leads {
                    best = Some(c);
                }
            }
        }
        best
    });
    let mut beats: Vec<(usize, Candidate)> = bests.into_iter().enumerate().filter_map(|(i, c)| c.map(|c| (i, c))).collect();
    if beats.is_empty() {
        return Ok(None);
    }
    beats.sort_by(|a, b| b.1.log_likelihood.total_cmp(&a.1.log_likelihood).then(a.0.cmp(&b.0)));
    beats.truncate(cfg.beat_pool);
    let gains: Vec<f64> = beats.iter().map(|(_, c)| c.log_likelihood - current_ll).collect();
    let total: f64 = gains.iter().sum();
    let mut rng = exec::stream_rng(seed, tasks as u64);
    let mut u = rng.random::<f64>() * total;
    let mut pick = beats.len() - 1;
    for (i, g) in gains.iter().enumerate() {
        if u < *g {
            pick = i;
            break;
        }
        u -= g;
    }
    let chosen = &beats[pick].1;
    if chosen.log_likelihood <= current_ll {
        return Err(Error::Internal("accepted step lowered the likelihood".into()));
    }
    let mut next = model.clone();
    next.set_covariances(&chosen.params);
    // guard against repair output that no longer factors
    factors(&next)?;
    Ok(Some(RoundResult {
        model: next,
        log_likelihood: chosen.log_likelihood,
        beats: beats.len(),
        repairs: chosen.repairs,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn heavy_damping_freezes() {
        let g = DVector::from_vec(vec![1.0, -2.0]);
        let h = DMatrix::from_row_slice(2, 2, &[-3.0, 0.5, 0.5, -2.0]);
        let d = damped_step(&g, &h, 1e15, 1.0).unwrap();
        assert!(d.amax() < 1e-14);
    }

    #[test]
    fn undamped_is_newton() {
        // concave quadratic: f(x) = g'x + x'Hx/2 has its maximum at -H^-1 g
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = DMatrix::from_row_slice(3, 3, &[-3.0, 0.5, 0.1, 0.5, -2.0, 0.2, 0.1, 0.2, -1.5]);
        let newton = -h.clone().try_inverse().unwrap() * &g;
        let d = damped_step(&g, &h, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(d, newton, epsilon = 1e-10);
        assert!(damped_step(&g, &DMatrix::zeros(3, 3), 0.0, 1.0).is_none());
    }

    #[test]
    fn digits() {
        assert_eq!(magnitude_digits(&DMatrix::from_element(1, 1, 0.3)), 1);
        assert_eq!(magnitude_digits(&DMatrix::from_element(1, 1, -999.0)), 3);
        assert_eq!(magnitude_digits(&DMatrix::from_element(1, 1, 1000.0)), 4);
    }
}
