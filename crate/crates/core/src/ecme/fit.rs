use super::derivs::{joint_log_likelihood, step2_hessian};
use super::model::JointMixture;
use super::step1::{step1_probabilities, Step1Config};
use super::step2::{lm_round, LMConfig};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::ReturnsPanel;
use crate::lp::MarginalConstraints;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmeConfig {
    pub epsilon: f64,
    pub max_outer: usize,
    pub step1_max_iters: usize,
    pub lm: LMConfig,
}

impl Default for EcmeConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-15,
            max_outer: 100,
            step1_max_iters: 500,
            lm: LMConfig::default(),
        }
    }
}

impl EcmeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) || self.max_outer == 0 || self.step1_max_iters == 0 {
            return Err(Error::Domain(format!("invalid ECME config {self:?}")));
        }
        self.lm.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EcmeEvent {
    Step1 { iteration: usize },
    Step2 { iteration: usize, round: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcmeIteration {
    pub step1_iterations: usize,
    pub dropped_cells: Vec<usize>,
    pub ll_after_step1: f64,
    pub step2_rounds: usize,
    pub repairs: usize,
    pub ll_after_step2: f64,
    /// Count of positive Hessian eigenvalues at the end of Step 2.
    pub positive_eigenvalues: usize,
    /// Condition number of the Hessian eigenvector matrix.
    pub eigenvector_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcmeTrace {
    pub iterations: Vec<EcmeIteration>,
    /// Likelihood after every accepted update, in order.
    pub accepted_ll: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcmeFit {
    pub model: JointMixture,
    pub constraints: MarginalConstraints,
    pub log_likelihood: f64,
    pub trace: EcmeTrace,
}

pub fn ecme_fit(panel: &ReturnsPanel, initial: &JointMixture, constraints: &MarginalConstraints, cfg: &EcmeConfig, seed: u64) -> Result<EcmeFit> {
    ecme_fit_observed(panel, initial, constraints, cfg, seed, |_, _, _| {})
}

/// As [`ecme_fit`], calling `observe` after every accepted update.
pub fn ecme_fit_observed<F>(
    panel: &ReturnsPanel,
    initial: &JointMixture,
    constraints: &MarginalConstraints,
    cfg: &EcmeConfig,
    seed: u64,
    mut observe: F,
) -> Result<EcmeFit>
where
    F: FnMut(EcmeEvent, &JointMixture, f64),
{
    cfg.validate()?;
    initial.validate(&cfg.lm.pd)?;
    let step1_cfg = Step1Config {
        epsilon: cfg.epsilon,
        max_iters: cfg.step1_max_iters,
    };
    let mut model = initial.clone();
    let mut constraints = constraints.clone();
    let mut ll = joint_log_likelihood(panel, &model)?;
    let mut trace = EcmeTrace {
        iterations: Vec::new(),
        accepted_ll: vec![ll],
        converged: false,
    };
    let tol = cfg.lm.convergence_scale * cfg.epsilon;
    for iteration in 1..=cfg.max_outer {
        let s1 = step1_probabilities(panel, &model, &constraints, &step1_cfg)?;
        model = s1.model;
        constraints = s1.constraints;
        ll = s1.log_likelihood;
        trace.accepted_ll.push(ll);
        observe(EcmeEvent::Step1 { iteration }, &model, ll);
        let ll_after_step1 = ll;

        let mut rounds = 0;
        let mut repairs = 0;
        while rounds < cfg.lm.max_rounds {
            let round_seed = exec::child_seed(seed, ((iteration as u64) << 32) | rounds as u64);
            let Some(r) = lm_round(panel, &model, ll, &cfg.lm, round_seed)? else {
                break;
            };
            rounds += 1;
            repairs += r.repairs;
            let gain = r.log_likelihood - ll;
            model = r.model;
            ll = r.log_likelihood;
            trace.accepted_ll.push(ll);
            observe(EcmeEvent::Step2 { iteration, round: rounds }, &model, ll);
            if gain < tol * ll.abs() {
                break;
            }
        }
        let hessian = step2_hessian(panel, &model)?;
        let eig = hessian.symmetric_eigen();
        let positive_eigenvalues = eig.eigenvalues.iter().filter(|v| **v > 0.0).count();
        let sv = eig.eigenvectors.singular_values();
        let eigenvector_condition = sv.max() / sv.min();
        trace.iterations.push(EcmeIteration {
            step1_iterations: s1.iterations,
            dropped_cells: s1.dropped_cells,
            ll_after_step1,
            step2_rounds: rounds,
            repairs,
            ll_after_step2: ll,
            positive_eigenvalues,
            eigenvector_condition,
        });
        if ll - ll_after_step1 < tol * ll_after_step1.abs() {
            trace.converged = true;
            break;
        }
    }
    Ok(EcmeFit {
        model,
        constraints,
        log_likelihood: ll,
        trace,
    })
}
