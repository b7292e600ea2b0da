//! Cell-probability calibration under marginal constraints.

use nalgebra::DMatrix;

use super::simplex::{solve_lp, LinearProgram, Sense};
use crate::error::{Error, Result};
use crate::grid::{AssignmentTable, CellGrid};
use crate::stats::UnivariateMixture;

const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LPConfig {
    /// Penalty on probability mass placed in cells with no observations.
    pub penalty_m: f64,
    /// Piecewise-linear segments per cell for the squared-deviation surrogate.
    pub ssd_segments: usize,
    pub zero_tolerance: f64,
}

impl Default for LPConfig {
    fn default() -> Self {
        Self {
            penalty_m: 1e6,
            ssd_segments: 500,
            zero_tolerance: 1e-9,
        }
    }
}

impl LPConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.penalty_m > 1.0) || self.ssd_segments < 2 || !(self.zero_tolerance > 0.0) {
            return Err(Error::Domain(format!("invalid LP config {self:?}")));
        }
        Ok(())
    }
}

/// Full-row-rank marginal system `lhs * p = rhs` over `cells`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalConstraints {
    pub lhs: DMatrix<f64>,
    pub rhs: Vec<f64>,
    pub cells: Vec<usize>,
}

impl MarginalConstraints {
    pub fn n_rows(&self) -> usize {
        self.lhs.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureSolution {
    pub probs: Vec<f64>,
    pub kept_cells: Vec<usize>,
    pub objective: f64,
}

/// The unreduced system: first `g_j - 1` component rows per asset, then sum-to-one.
fn marginal_rows(grid: &CellGrid, marginals: &[UnivariateMixture], cells: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for (j, mix) in marginals.iter().enumerate() {
        let weights = mix.weights();
        for (i, &w) in weights.iter().enumerate().take(mix.len() - 1) {
            lhs.push(cells.iter().map(|&c| if grid.indicator(c, j, i) { 1.0 } else { 0.0 }).collect());
            rhs.push(w);
        }
    }
    lhs.push(vec![1.0; cells.len()]);
    rhs.push(1.0);
    (lhs, rhs)
}

fn rank(rows: &[Vec<f64>], width: usize) -> usize {
    if rows.is_empty() || width == 0 {
        return 0;
    }
    let m = DMatrix::from_fn(rows.len(), width, |r, c| rows[r][c]);
    m.svd(false, false).rank(RANK_TOL)
}

fn check_inputs(grid: &CellGrid, marginals: &[UnivariateMixture]) -> Result<()> {
    let comps: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
    if comps != grid.comps_per_asset() {
        return Err(Error::Domain("marginals do not match the cell grid".into()));
    }
    Ok(())
}

pub fn reduce_constraints(grid: &CellGrid, marginals: &[UnivariateMixture], kept_cells: &[usize]) -> Result<MarginalConstraints> {
    check_inputs(grid, marginals)?;
    if kept_cells.is_empty() {
        return Err(Error::Domain("no cells kept".into()));
    }
    if let Some(&bad) = kept_cells.iter().find(|&&c| c >= grid.len()) {
        return Err(Error::Domain(format!("cell {bad} outside grid")));
    }
    let (mut rows, mut rhs) = marginal_rows(grid, marginals, kept_cells);
    let width = kept_cells.len();
    let target = rank(&rows, width);
    let augmented: Vec<Vec<f64>> = rows
        .iter()
        .zip(&rhs)
        .map(|(r, &b)| r.iter().copied().chain(std::iter::once(b)).collect())
        .collect();
    if rank(&augmented, width + 1) != target {
        return Err(Error::Infeasible);
    }
    let mut r = 0;
    while rows.len() > target && r < rows.len() {
        let saved = std::mem::replace(&mut rows[r], vec![0.0; width]);
        if rank(&rows, width) == target {
            rows.remove(r);
            rhs.remove(r);
        } else {
            rows[r] = saved;
            r += 1;
        }
    }
    let lhs = DMatrix::from_fn(rows.len(), width, |i, c| rows[i][c]);
    Ok(MarginalConstraints {
        lhs,
        rhs,
        cells: kept_cells.to_vec(),
    })
}

/// Whether some nonnegative probabilities on `cells` reproduce every marginal
/// weight.
pub fn marginals_feasible(grid: &CellGrid, marginals: &[UnivariateMixture], cells: &[usize]) -> Result<bool> {
    check_inputs(grid, marginals)?;
    if cells.is_empty() {
        return Ok(false);
    }
    let (rows, rhs) = marginal_rows(grid, marginals, cells);
    let mut lp = LinearProgram::minimize(vec![0.0; cells.len()]);
    for (r, b) in rows.into_iter().zip(rhs) {
        lp.push(r, Sense::Eq, b);
    }
    match solve_lp(&lp) {
        Ok(_) => Ok(true),
        Err(Error::Infeasible) => Ok(false),
        Err(e) => Err(e),
    }
}

fn finish(raw: Vec<f64>, objective: f64, cfg: &LPConfig) -> StructureSolution {
    let probs: Vec<f64> = raw.into_iter().map(|p| if p > cfg.zero_tolerance { p } else { 0.0 }).collect();
    let kept_cells = (0..probs.len()).filter(|&c| probs[c] > 0.0).collect();
    StructureSolution { probs, kept_cells, objective }
}

fn prepare(table: &AssignmentTable, marginals: &[UnivariateMixture], cfg: &LPConfig) -> Result<(Vec<usize>, Vec<f64>)> {
    cfg.validate()?;
    check_inputs(&table.grid, marginals)?;
    let empty: Vec<usize> = (0..table.grid.len()).filter(|&c| table.counts[c] == 0).collect();
    Ok((empty, table.probabilities.clone()))
}

/// Minimizes the largest absolute deviation from the empirical cell
/// frequencies; unobserved cells are penalized rather than forbidden.
pub fn minimax_structure(table: &AssignmentTable, marginals: &[UnivariateMixture], cfg: &LPConfig) -> Result<StructureSolution> {
    let (empty, observed) = prepare(table, marginals, cfg)?;
    let n = table.grid.len();
    let z = n;
    let width = n + 1 + empty.len();
    let mut objective = vec![0.0; width];
    objective[z] = 1.0;
    for k in 0..empty.len() {
        objective[n + 1 + k] = cfg.penalty_m;
    }
    let mut lp = LinearProgram::minimize(objective);
    for c in 0..n {
        let mut above = vec![0.0; width];
        above[c] = 1.0;
        above[z] = -1.0;
        lp.push(above, Sense::Le, observed[c]);
        let mut below = vec![0.0; width];
        below[c] = -1.0;
        below[z] = -1.0;
        lp.push(below, Sense::Le, -observed[c]);
    }
    push_penalties(&mut lp, &empty, n + 1, width, |c, row| row[c] = 1.0);
    let all: Vec<usize> = (0..n).collect();
    let (rows, rhs) = marginal_rows(&table.grid, marginals, &all);
    for (row, b) in rows.into_iter().zip(rhs) {
        let mut full = row;
        full.resize(width, 0.0);
        lp.push(full, Sense::Eq, b);
    }
    let sol = solve_lp(&lp)?;
    let probs = sol.x[..n].to_vec();
    let worst = probs.iter().zip(&observed).map(|(p, o)| (p - o).abs()).fold(0.0, f64::max);
    Ok(finish(probs, worst, cfg))
}

fn push_penalties(lp: &mut LinearProgram, empty: &[usize], offset: usize, width: usize, prob_terms: impl Fn(usize, &mut Vec<f64>)) {
    for (k, &c) in empty.iter().enumerate() {
        let mut row = vec![0.0; width];
        prob_terms(c, &mut row);
        row[offset + k] = -1.0;
        lp.push(row, Sense::Le, 0.0);
    }
}

/// Minimizes the piecewise-linear surrogate of the summed squared deviations.
pub fn min_ssd_structure(table: &AssignmentTable, marginals: &[UnivariateMixture], cfg: &LPConfig) -> Result<StructureSolution> {
    let (empty, observed) = prepare(table, marginals, cfg)?;
    let n = table.grid.len();
    let knots = cfg.ssd_segments + 1;
    let level = |k: usize| k as f64 / cfg.ssd_segments as f64;
    let n_alpha = n * knots;
    let width = n_alpha + empty.len();
    let mut objective = vec![0.0; width];
    for c in 0..n {
        for k in 0..knots {
            objective[c * knots + k] = (level(k) - observed[c]).powi(2);
        }
    }
    for k in 0..empty.len() {
        objective[n_alpha + k] = cfg.penalty_m;
    }
    let mut lp = LinearProgram::minimize(objective.clone());
    for c in 0..n {
        let mut row = vec![0.0; width];
        row[c * knots..(c + 1) * knots].fill(1.0);
        lp.push(row, Sense::Eq, 1.0);
    }
    let as_prob = |c: usize, row: &mut Vec<f64>| {
        for k in 0..knots {
            row[c * knots + k] = level(k);
        }
    };
    push_penalties(&mut lp, &empty, n_alpha, width, as_prob);
    let all: Vec<usize> = (0..n).collect();
    let (rows, rhs) = marginal_rows(&table.grid, marginals, &all);
    for (row, b) in rows.into_iter().zip(rhs) {
        let mut full = vec![0.0; width];
        for c in 0..n {
            if row[c] != 0.0 {
                as_prob(c, &mut full);
            }
        }
        lp.push(full, Sense::Eq, b);
    }
    let sol = solve_lp(&lp)?;
    let probs: Vec<f64> = (0..n).map(|c| (0..knots).map(|k| sol.x[c * knots + k] * level(k)).sum()).collect();
    let surrogate: f64 = (0..n_alpha).map(|v| objective[v] * sol.x[v]).sum();
    Ok(finish(probs, surrogate, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn marginal_residual(grid: &CellGrid, m: &[UnivariateMixture], p: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, mix) in m.iter().enumerate() {
            for (i, w) in mix.weights().iter().enumerate() {
                let s: f64 = (0..grid.len()).filter(|&c| grid.indicator(c, j, i)).map(|c| p[c]).sum();
                worst = worst.max((s - w).abs());
            }
        }
        worst
    }

    #[test]
    fn full_grid_is_independent() {
        let grid = CellGrid::new(&[2, 3, 2]).unwrap();
        let m = vec![
            UnivariateMixture::from_parts(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
            UnivariateMixture::from_parts(&[0.2, 0.3, 0.5], &[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap(),
            UnivariateMixture::from_parts(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
        ];
        let all: Vec<usize> = (0..grid.len()).collect();
        let c = reduce_constraints(&grid, &m, &all).unwrap();
        assert_eq!(c.n_rows(), 2 + 3 + 2 - 3 + 1);
        assert_eq!(c.lhs.clone().svd(false, false).rank(RANK_TOL), c.n_rows());
    }

    #[test]
    fn diagonal_cells_reduce() {
        let grid = CellGrid::new(&[3, 3]).unwrap();
        let mix = UnivariateMixture::from_parts(&[0.2, 0.3, 0.5], &[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]).unwrap();
        let m = vec![mix.clone(), mix];
        let diag = [0, 4, 8];
        let c = reduce_constraints(&grid, &m, &diag).unwrap();
        assert_eq!(c.lhs.shape(), (3, 3));
        for col in 0..3 {
            assert!(c.lhs.column(col).iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn single_asset_system() {
        let grid = CellGrid::new(&[1]).unwrap();
        let m = vec![UnivariateMixture::normal(0.0, 1.0).unwrap()];
        let c = reduce_constraints(&grid, &m, &[0]).unwrap();
        assert_eq!(c.n_rows(), 1);
        assert_eq!(c.rhs, vec![1.0]);
    }

    #[test]
    fn single_asset_pins_probabilities() {
        let m = vec![UnivariateMixture::from_parts(&[0.3, 0.7], &[0.0, 1.0], &[1.0, 1.0]).unwrap()];
        let grid = CellGrid::new(&[2]).unwrap();
        let table = AssignmentTable::from_counts(grid, vec![5, 5]).unwrap();
        let cfg = LPConfig::default();
        let mm = minimax_structure(&table, &m, &cfg).unwrap();
        assert_abs_diff_eq!(mm.probs[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(mm.probs[1], 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(mm.objective, 0.2, epsilon = 1e-12);
        let ssd = min_ssd_structure(&table, &m, &cfg).unwrap();
        assert_abs_diff_eq!(ssd.probs[0], 0.3, epsilon = 1e-12);
        assert_abs_diff_eq!(ssd.probs[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn product_counts_are_reproduced() {
        // marginals (0.4, 0.6) x (0.25, 0.75) and counts proportional to the product
        let m = vec![
            UnivariateMixture::from_parts(&[0.4, 0.6], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
            UnivariateMixture::from_parts(&[0.25, 0.75], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
        ];
        let grid = CellGrid::new(&[2, 2]).unwrap();
        let table = AssignmentTable::from_counts(grid.clone(), vec![10, 30, 15, 45]).unwrap();
        let cfg = LPConfig::default();
        let mm = minimax_structure(&table, &m, &cfg).unwrap();
        assert!(mm.objective < 1e-12);
        for c in 0..4 {
            assert_abs_diff_eq!(mm.probs[c], table.probabilities[c], epsilon = 1e-12);
        }
        let ssd = min_ssd_structure(&table, &m, &cfg).unwrap();
        for c in 0..4 {
            assert!((ssd.probs[c] - table.probabilities[c]).abs() <= 1.0 / 500.0);
        }
        assert!(ssd.objective <= 4.0 / (500.0f64 * 500.0));
        assert!(marginal_residual(&grid, &m, &ssd.probs) < 1e-9);
    }

    #[test]
    fn reference_counts() {
        // lexicographic order: (1,1,1),(1,1,2),(1,2,1),(1,2,2),(1,3,1),(1,3,2)
        let grid = CellGrid::new(&[1, 3, 2]).unwrap();
        let m = vec![
            UnivariateMixture::normal(0.1, 0.2).unwrap(),
            UnivariateMixture::from_parts(&[0.16381, 0.70742, 0.12877], &[-0.1, 0.1, 0.3], &[0.1, 0.1, 0.1]).unwrap(),
            UnivariateMixture::from_parts(&[0.94774, 0.05226], &[0.0, 0.1], &[0.05, 0.05]).unwrap(),
        ];
        let table = AssignmentTable::from_counts(grid.clone(), vec![14, 0, 57, 3, 12, 2]).unwrap();
        let cfg = LPConfig::default();
        let mm = minimax_structure(&table, &m, &cfg).unwrap();
        assert!(marginal_residual(&grid, &m, &mm.probs) < 1e-9);
        assert_eq!(mm.probs[1], 0.0);
        let ssd = min_ssd_structure(&table, &m, &cfg).unwrap();
        assert!(marginal_residual(&grid, &m, &ssd.probs) < 1e-9);
        assert_eq!(ssd.probs[1], 0.0);
    }

    #[test]
    fn empty_cell_used_only_when_needed() {
        // marginals force mass into the unobserved cell (1,1)
        let m = vec![
            UnivariateMixture::from_parts(&[0.5, 0.5], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
            UnivariateMixture::from_parts(&[0.2, 0.8], &[0.0, 1.0], &[1.0, 1.0]).unwrap(),
        ];
        let grid = CellGrid::new(&[2, 2]).unwrap();
        let table = AssignmentTable::from_counts(grid.clone(), vec![1, 5, 4, 0]).unwrap();
        let cfg = LPConfig::default();
        let mm = minimax_structure(&table, &m, &cfg).unwrap();
        assert!(mm.probs[3] > cfg.zero_tolerance);
        // forcing the cell to zero makes the marginal system infeasible
        let full_lp = {
            let (rows, rhs) = marginal_rows(&grid, &m, &[0, 1, 2]);
            let mut lp = LinearProgram::minimize(vec![0.0; 3]);
            for (row, b) in rows.into_iter().zip(rhs) {
                lp.push(row, Sense::Eq, b);
            }
            lp
        };
        assert_eq!(solve_lp(&full_lp), Err(Error::Infeasible));
    }

    #[test]
    fn inconsistent_reduction_is_rejected() {
        let grid = CellGrid::new(&[2, 2]).unwrap();
        let m1 = UnivariateMixture::from_parts(&[0.33, 0.67], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let m2 = UnivariateMixture::from_parts(&[0.32, 0.68], &[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let marginals = vec![m1, m2];
        assert_eq!(reduce_constraints(&grid, &marginals, &[0, 3]), Err(Error::Infeasible));
        assert!(!marginals_feasible(&grid, &marginals, &[0, 3]).unwrap());
        assert!(marginals_feasible(&grid, &marginals, &[0, 1, 3]).unwrap());
        assert!(!marginals_feasible(&grid, &marginals, &[0, 2, 3]).unwrap());
    }
}
