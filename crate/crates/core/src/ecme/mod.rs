//! Constrained maximum-likelihood fitting of the joint mixture: probabilities
//! by Newton on the Lagrangian, covariances by randomized damped Newton.

mod derivs;
mod fit;
mod model;
mod pd;
mod step1;
mod step2;

pub use derivs::{joint_log_likelihood, mixture_covariance, mvn_pdf, normal_baseline, q_term, step2_gradient, step2_hessian, NormalBaseline};
pub use fit::{ecme_fit, ecme_fit_observed, EcmeConfig, EcmeEvent, EcmeFit, EcmeIteration, EcmeTrace};
pub use model::{covariance_pairs, pairs_per_component, JointComponent, JointMixture};
pub use pd::{is_positive_definite, ridge_repair, PdThresholds};
pub use step1::{step1_probabilities, Step1Config, Step1Outcome};
pub use step2::{damped_step, evaluate_candidate, lm_candidate_step, lm_round, Candidate, LMConfig, RoundResult, TASKS_PER_MULTIPLIER};

#[cfg(test)]
mod tests;
