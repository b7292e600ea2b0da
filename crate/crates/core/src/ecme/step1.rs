//! Newton iterations on the Lagrangian for the component probabilities.

use nalgebra::{DMatrix, DVector};

use super::derivs::{densities, factors, sum_log};
use super::model::JointMixture;
use crate::error::{Error, Result};
use crate::grid::ReturnsPanel;
use crate::lp::{marginals_feasible, reduce_constraints, MarginalConstraints};

const RESCALE_CAP: f64 = 1e10;
const RANK_RTOL: f64 = 1e-13;
const RESIDUAL_TOL: f64 = 1e-12;
/// Share of the distance to the boundary covered by a damped step.
const BOUNDARY_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step1Config {
    pub epsilon: f64,
    pub max_iters: usize,
}

impl Default for Step1Config {
    fn default() -> Self {
        Self {
            epsilon: 1e-15,
            max_iters: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step1Outcome {
    pub model: JointMixture,
    pub constraints: MarginalConstraints,
    pub iterations: usize,
    /// Cells removed because their probability reached zero.
    pub dropped_cells: Vec<usize>,
    pub log_likelihood: f64,
}

/// Solves the bordered system, scaling the constraint block by ten until it
/// is numerically nonsingular.
fn bordered_solve(h_pp: &DMatrix<f64>, grad: &DVector<f64>, a: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let n = h_pp.nrows();
    let m = a.nrows();
    let mut scale = 1.0;
    while scale <= RESCALE_CAP {
        let mut k = DMatrix::zeros(n + m, n + m);
        k.view_mut((0, 0), (n, n)).copy_from(h_pp);
        let sa = a * scale;
        k.view_mut((0, n), (n, m)).copy_from(&(-sa.transpose()));
        k.view_mut((n, 0), (m, n)).copy_from(&(-&sa));
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-grad));
        rhs.rows_mut(n, m).copy_from(&(residual * scale));
        let svd = k.svd(true, true);
        let tol = RANK_RTOL * svd.singular_values.max();
        if svd.rank(tol) == n + m {
            let sol = svd.solve(&rhs, tol).map_err(|e| Error::Singular(e.to_string()))?;
            return Ok(sol.rows(0, n).into_owned());
        }
        scale *= 10.0;
    }
    Err(Error::Singular("bordered Hessian stays rank deficient after rescaling".into()))
}

/// Maximizes the likelihood over the probabilities of the current cells
/// subject to the marginal constraints. Cells whose probability falls to
/// zero or below are removed for good.
pub fn step1_probabilities(panel: &ReturnsPanel, model: &JointMixture, constraints: &MarginalConstraints, cfg: &Step1Config) -> Result<Step1Outcome> {
    if constraints.cells != model.cells() {
        return Err(Error::Domain("constraints are not over the model's cells".into()));
    }
    let mut model = model.clone();
    let mut constraints = constraints.clone();
    let facs = factors(&model)?;
    let dens = densities(panel, model.components(), &facs);
    // component densities stay fixed; only the weights move
    let mut comp: Vec<Vec<f64>> = dens.comp;
    let mut p: Vec<f64> = model.probabilities();
    let mut positions: Vec<usize> = (0..p.len()).collect();
    let mix_of = |p: &[f64], comp: &[Vec<f64>]| -> Vec<f64> { comp.iter().map(|row| row.iter().zip(p).map(|(f, w)| f * w).sum()).collect() };
    let mut ll = sum_log(&mix_of(&p, &comp))?;
    let mut dropped_cells = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > cfg.max_iters {
            return Err(Error::IterationLimit(cfg.max_iters));
        }
        let n = p.len();
        let mix = mix_of(&p, &comp);
        let mut grad = DVector::zeros(n);
        let mut h_pp = DMatrix::zeros(n, n);
        for (row, f) in comp.iter().zip(&mix) {
            for c in 0..n {
                grad[c] += row[c] / f;
                for d in 0..n {
                    h_pp[(c, d)] -= row[c] * row[d] / (f * f);
                }
            }
        }
        let pv = DVector::from_column_slice(&p);
        let residual = &constraints.lhs * &pv - DVector::from_column_slice(&constraints.rhs);
        let delta = bordered_solve(&h_pp, &grad, &constraints.lhs, &residual)?;
        let hit: Vec<usize> = (0..n).filter(|&c| p[c] + delta[c] <= 0.0).collect();
        let keep: Vec<usize> = (0..n).filter(|c| !hit.contains(c)).collect();
        let kept_cells: Vec<usize> = keep.iter().map(|&c| constraints.cells[c]).collect();
        // Cells are dropped only when the survivors can still carry the
        // marginal weights; otherwise the step stops short of the boundary.
        let dropped = !hit.is_empty() && marginals_feasible(model.grid(), model.marginals(), &kept_cells)?;
        let step = if hit.is_empty() || dropped {
            1.0
        } else {
            BOUNDARY_FRACTION * hit.iter().map(|&c| p[c] / -delta[c]).fold(1.0, f64::min)
        };
        for c in 0..n {
            p[c] += step * delta[c];
        }
        if dropped {
            dropped_cells.extend(hit.iter().map(|&c| constraints.cells[c]));
            p = keep.iter().map(|&c| p[c]).collect();
            comp = comp.iter().map(|row| keep.iter().map(|&c| row[c]).collect()).collect();
            positions = keep.iter().map(|&c| positions[c]).collect();
            constraints = reduce_constraints(model.grid(), model.marginals(), &kept_cells)?;
        }
        let new_ll = sum_log(&mix_of(&p, &comp))?;
        let res = (&constraints.lhs * DVector::from_column_slice(&p) - DVector::from_column_slice(&constraints.rhs)).amax();
        let tiny_step = step * delta.amax() < 1e-15;
        let stalled = (new_ll - ll).abs() <= cfg.epsilon * ll.abs() || tiny_step;
        ll = new_ll;
        if !dropped && stalled && res < RESIDUAL_TOL {
            break;
        }
    }
    model.retain_with_probs(&positions, &p);
    Ok(Step1Outcome {
        model,
        constraints,
        iterations,
        dropped_cells,
        log_likelihood: ll,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecme::derivs::joint_log_likelihood;
    use crate::grid::CellGrid;
    use crate::stats::UnivariateMixture;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn marginals() -> Vec<UnivariateMixture> {
        vec![
            UnivariateMixture::from_parts(&[0.5, 0.5], &[-1.0, 1.0], &[0.6, 0.6]).unwrap(),
            UnivariateMixture::from_parts(&[0.5, 0.5], &[-1.0, 1.0], &[0.6, 0.6]).unwrap(),
        ]
    }

    fn data() -> ReturnsPanel {
        // mostly concordant pairs, so the diagonal cells deserve more weight
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = (0..200)
            .map(|_| {
                let a: f64 = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
                let b = if rng.random_bool(0.8) { a } else { -a };
                vec![a + 0.6 * rng.random_range(-1.0..1.0), b + 0.6 * rng.random_range(-1.0..1.0)]
            })
            .collect();
        ReturnsPanel::new(rows).unwrap()
    }

    fn model_at(s: f64) -> JointMixture {
        // one-dimensional family: p00 = p11 = s, p01 = p10 = 0.5 - s
        let grid = CellGrid::new(&[2, 2]).unwrap();
        let cells = [(0, s), (1, 0.5 - s), (2, 0.5 - s), (3, s)];
        JointMixture::new(grid, marginals(), &cells, &vec![vec![0.0]; 4]).unwrap()
    }

    #[test]
    fn single_component_is_fixed() {
        let grid = CellGrid::new(&[1]).unwrap();
        let m = vec![UnivariateMixture::normal(0.0, 1.0).unwrap()];
        let model = JointMixture::new(grid.clone(), m.clone(), &[(0, 1.0)], &[vec![]]).unwrap();
        let panel = ReturnsPanel::new(vec![vec![0.1], vec![-0.4]]).unwrap();
        let cons = reduce_constraints(&grid, &m, &[0]).unwrap();
        let out = step1_probabilities(&panel, &model, &cons, &Step1Config::default()).unwrap();
        assert_eq!(out.model.probabilities(), vec![1.0]);
    }

    #[test]
    fn matches_one_dimensional_search() {
        let panel = data();
        let start = model_at(0.25);
        let cons = reduce_constraints(start.grid(), start.marginals(), &start.cells()).unwrap();
        let out = step1_probabilities(&panel, &start, &cons, &Step1Config::default()).unwrap();
        // golden-section search over the free direction
        let f = |s: f64| joint_log_likelihood(&panel, &model_at(s)).unwrap();
        let (mut lo, mut hi) = (1e-6, 0.5 - 1e-6);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let a = hi - phi * (hi - lo);
            let b = lo + phi * (hi - lo);
            if f(a) < f(b) {
                lo = a;
            } else {
                hi = b;
            }
        }
        let best = 0.5 * (lo + hi);
        assert_abs_diff_eq!(out.model.probabilities()[0], best, epsilon = 1e-8);
        assert_abs_diff_eq!(out.model.probabilities()[3], best, epsilon = 1e-8);
        assert!(out.model.marginal_residual() < 1e-12);
        // a stationary point is a fixed point
        let again = step1_probabilities(&panel, &out.model, &out.constraints, &Step1Config::default()).unwrap();
        for (a, b) in again.model.probabilities().iter().zip(out.model.probabilities()) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn drops_only_when_marginals_stay_feasible() {
        // unequal low-regime weights force mass off the diagonal, while the
        // data are perfectly concordant
        let m1 = UnivariateMixture::from_parts(&[0.33, 0.67], &[-1.0, 1.0], &[0.3, 0.3]).unwrap();
        let m2 = UnivariateMixture::from_parts(&[0.32, 0.68], &[-1.0, 1.0], &[0.3, 0.3]).unwrap();
        let grid = CellGrid::new(&[2, 2]).unwrap();
        let start = JointMixture::new(grid, vec![m1, m2], &[(0, 0.31), (1, 0.02), (2, 0.01), (3, 0.66)], &vec![vec![0.0]; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows = (0..300)
            .map(|_| {
                let a: f64 = if rng.random_bool(0.33) { -1.0 } else { 1.0 };
                vec![a + 0.3 * rng.random_range(-1.0..1.0), a + 0.3 * rng.random_range(-1.0..1.0)]
            })
            .collect();
        let panel = ReturnsPanel::new(rows).unwrap();
        let cons = reduce_constraints(start.grid(), start.marginals(), &start.cells()).unwrap();
        let out = step1_probabilities(&panel, &start, &cons, &Step1Config::default()).unwrap();
        assert!(out.model.marginal_residual() < 1e-12);
        assert!(out.model.cells().contains(&1));
        assert!(out.dropped_cells.iter().all(|&c| c == 2));
    }
}
