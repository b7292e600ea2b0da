use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::grid::{CellGrid, ReturnsPanel};
use crate::lp::reduce_constraints;
use crate::stats::UnivariateMixture;

fn draw(model: &JointMixture, t: usize, rng: &mut ChaCha8Rng) -> ReturnsPanel {
    let chols: Vec<_> = model.components().iter().map(|c| c.cov.clone().cholesky().unwrap().l()).collect();
    let rows = (0..t)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = model.len() - 1;
            for (i, c) in model.components().iter().enumerate() {
                acc += c.prob;
                if u <= acc {
                    pick = i;
                    break;
                }
            }
            let z = DVector::from_fn(model.n_assets(), |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = &model.components()[pick].mean + &chols[pick] * z;
            x.iter().copied().collect()
        })
        .collect();
    ReturnsPanel::new(rows).unwrap()
}

fn small_lm() -> EcmeConfig {
    EcmeConfig {
        lm: LMConfig {
            steps_per_thread: 60,
            thread_multiplier: 1,
            ..LMConfig::default()
        },
        ..EcmeConfig::default()
    }
}

fn two_asset_model(rho: [f64; 2]) -> JointMixture {
    let m1 = UnivariateMixture::from_parts(&[0.6, 0.4], &[-0.5, 1.0], &[0.5, 0.4]).unwrap();
    let m2 = UnivariateMixture::from_parts(&[0.6, 0.4], &[0.0, 1.5], &[0.3, 0.6]).unwrap();
    let grid = CellGrid::new(&[2, 2]).unwrap();
    JointMixture::from_correlations(grid, vec![m1, m2], &[(0, 0.6), (3, 0.4)], &[vec![rho[0]], vec![rho[1]]]).unwrap()
}

#[test]
fn zero_covariance_recovered() {
    let truth = two_asset_model([0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let panel = draw(&truth, 500, &mut rng);
    let cons = reduce_constraints(truth.grid(), truth.marginals(), &truth.cells()).unwrap();
    let fit = ecme_fit(&panel, &truth, &cons, &small_lm(), 4).unwrap();
    for c in fit.model.components() {
        let bound = 0.15 * (c.cov[(0, 0)] * c.cov[(1, 1)]).sqrt();
        assert!(c.cov[(0, 1)].abs() <= bound, "{} > {}", c.cov[(0, 1)], bound);
    }
}

#[test]
fn accepted_updates_keep_invariants() {
    let truth = two_asset_model([0.7, -0.5]);
    let start = two_asset_model([0.0, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let panel = draw(&truth, 300, &mut rng);
    let cons = reduce_constraints(start.grid(), start.marginals(), &start.cells()).unwrap();
    let pd = PdThresholds::default();
    let mut last = f64::NEG_INFINITY;
    let fit = ecme_fit_observed(&panel, &start, &cons, &small_lm(), 5, |_, m, ll| {
        assert!(ll >= last);
        last = ll;
        assert!(m.marginal_residual() < 1e-8);
        for (c, orig) in m.components().iter().zip(start.components()) {
            assert!(is_positive_definite(&c.cov, &pd).unwrap());
            assert_eq!(c.cov.diagonal(), orig.cov.diagonal());
            assert_eq!(c.mean, orig.mean);
        }
    })
    .unwrap();
    assert!(fit.trace.accepted_ll.windows(2).all(|w| w[1] >= w[0]));
    assert!(fit.model.correlations(0)[0] > 0.4);
    assert!(fit.model.correlations(1)[0] < -0.2);
}

#[test]
fn candidates_are_positive_definite() {
    let model = two_asset_model([0.9, -0.9]);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let panel = draw(&two_asset_model([0.2, 0.1]), 100, &mut rng);
    let g = step2_gradient(&panel, &model).unwrap();
    let h = step2_hessian(&panel, &model).unwrap();
    let cfg = LMConfig::default();
    let pd = PdThresholds::default();
    let mut seen = 0;
    for _ in 0..300 {
        if let Some(c) = lm_candidate_step(&panel, &model, &g, &h, 3.0, &cfg, &mut rng) {
            let mut m = model.clone();
            for (comp, pair) in m.components_mut().iter_mut().zip(c.params.iter()) {
                comp.cov[(0, 1)] = *pair;
                comp.cov[(1, 0)] = *pair;
            }
            for comp in m.components() {
                assert!(is_positive_definite(&comp.cov, &pd).unwrap());
            }
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn model_rejects_bad_inputs() {
    let m = vec![UnivariateMixture::from_parts(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]).unwrap()];
    let grid = CellGrid::new(&[2]).unwrap();
    assert!(JointMixture::new(grid.clone(), m.clone(), &[(0, 0.4), (1, 0.6)], &[vec![], vec![]]).is_err());
    assert!(JointMixture::new(grid.clone(), m.clone(), &[(0, 0.5), (0, 0.5)], &[vec![], vec![]]).is_err());
    assert!(JointMixture::new(grid, m, &[(0, 0.5), (1, 0.5)], &[vec![], vec![]]).is_ok());
}
