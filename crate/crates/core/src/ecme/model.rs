use nalgebra::{DMatrix, DVector};

use super::pd::{is_positive_definite, PdThresholds};
use crate::error::{Error, Result};
use crate::grid::CellGrid;
use crate::lp::StructureSolution;
use crate::stats::UnivariateMixture;

const PROB_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct JointComponent {
    pub cell: usize,
    pub prob: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Normal mixture over a cell grid whose means and variances are pinned by
/// the per-asset marginal mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMixture {
    components: Vec<JointComponent>,
    marginals: Vec<UnivariateMixture>,
    grid: CellGrid,
}

/// Number of free covariances per component.
pub fn pairs_per_component(n_assets: usize) -> usize {
    n_assets * (n_assets - 1) / 2
}

/// Upper-triangle index pairs `(j, k)` with `j < k`, lexicographic.
pub fn covariance_pairs(n_assets: usize) -> Vec<(usize, usize)> {
    (0..n_assets).flat_map(|j| (j + 1..n_assets).map(move |k| (j, k))).collect()
}

impl JointMixture {
    /// Builds a validated mixture from `(cell, prob)` pairs and per-component
    /// off-diagonal covariances (ordered as [`covariance_pairs`]).
    pub fn new(grid: CellGrid, marginals: Vec<UnivariateMixture>, cells: &[(usize, f64)], off_diagonals: &[Vec<f64>]) -> Result<Self> {
        if cells.len() != off_diagonals.len() {
            return Err(Error::InvalidMixture("one covariance row per component required".into()));
        }
        let comps: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
        if comps != grid.comps_per_asset() {
            return Err(Error::InvalidMixture("marginals do not match the cell grid".into()));
        }
        let n = grid.n_assets();
        let pairs = covariance_pairs(n);
        let mut components = Vec::with_capacity(cells.len());
        for (&(cell, prob), off) in cells.iter().zip(off_diagonals) {
            if cell >= grid.len() {
                return Err(Error::CellNotFound(vec![cell]));
            }
            if off.len() != pairs.len() {
                return Err(Error::InvalidMixture("wrong number of covariances".into()));
            }
            let (mean, mut cov) = pinned_moments(&grid, &marginals, cell);
            for (&(j, k), &v) in pairs.iter().zip(off) {
                cov[(j, k)] = v;
                cov[(k, j)] = v;
            }
            components.push(JointComponent { cell, prob, mean, cov });
        }
        let model = Self { components, marginals, grid };
        model.validate(&PdThresholds::default())?;
        Ok(model)
    }

    /// Zero-covariance mixture placing the structure solution's probabilities
    /// on its kept cells.
    pub fn from_structure(grid: CellGrid, marginals: Vec<UnivariateMixture>, structure: &StructureSolution) -> Result<Self> {
        let pairs = pairs_per_component(grid.n_assets());
        let cells: Vec<(usize, f64)> = structure.kept_cells.iter().map(|&c| (c, structure.probs[c])).collect();
        let total: f64 = cells.iter().map(|c| c.1).sum();
        let cells: Vec<(usize, f64)> = cells.into_iter().map(|(c, p)| (c, p / total)).collect();
        let off = vec![vec![0.0; pairs]; cells.len()];
        Self::new(grid, marginals, &cells, &off)
    }

    /// Builds from correlations instead of covariances.
    pub fn from_correlations(grid: CellGrid, marginals: Vec<UnivariateMixture>, cells: &[(usize, f64)], correlations: &[Vec<f64>]) -> Result<Self> {
        let pairs = covariance_pairs(grid.n_assets());
        let mut off = Vec::with_capacity(cells.len());
        for (&(cell, _), rho) in cells.iter().zip(correlations) {
            if cell >= grid.len() || rho.len() != pairs.len() {
                return Err(Error::InvalidMixture("bad correlation row".into()));
            }
            let (_, cov) = pinned_moments(&grid, &marginals, cell);
            off.push(pairs.iter().zip(rho).map(|(&(j, k), r)| r * (cov[(j, j)] * cov[(k, k)]).sqrt()).collect());
        }
        Self::new(grid, marginals, cells, &off)
    }

    pub fn validate(&self, pd: &PdThresholds) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidMixture("no components".into()));
        }
        let total: f64 = self.components.iter().map(|c| c.prob).sum();
        if (total - 1.0).abs() > PROB_TOL {
            return Err(Error::InvalidMixture(format!("probabilities sum to {total}")));
        }
        let mut seen = vec![false; self.grid.len()];
        for c in &self.components {
            if !(c.prob > 0.0 && c.prob <= 1.0) {
                return Err(Error::InvalidMixture(format!("probability {} outside (0, 1]", c.prob)));
            }
            if std::mem::replace(&mut seen[c.cell], true) {
                return Err(Error::InvalidMixture(format!("cell {} used twice", c.cell)));
            }
            if !is_positive_definite(&c.cov, pd)? {
                return Err(Error::NotPositiveDefinite);
            }
        }
        let worst = self.marginal_residual();
        if worst > PROB_TOL {
            return Err(Error::InvalidMixture(format!("marginal weights violated by {worst:e}")));
        }
        Ok(())
    }

    /// Largest violation of the marginal weight constraints.
    pub fn marginal_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (j, mix) in self.marginals.iter().enumerate() {
            for (i, w) in mix.weights().iter().enumerate() {
                let s: f64 = self.components.iter().filter(|c| self.grid.indicator(c.cell, j, i)).map(|c| c.prob).sum();
                worst = worst.max((s - w).abs());
            }
        }
        worst
    }

    pub fn components(&self) -> &[JointComponent] {
        &self.components
    }

    pub fn marginals(&self) -> &[UnivariateMixture] {
        &self.marginals
    }

    pub fn grid(&self) -> &CellGrid {
        &self.grid
    }

    pub fn n_assets(&self) -> usize {
        self.grid.n_assets()
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn cells(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.cell).collect()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.prob).collect()
    }

    /// Off-diagonal covariances, component-major.
    pub fn covariance_vector(&self) -> DVector<f64> {
        let pairs = covariance_pairs(self.n_assets());
        DVector::from_iterator(
            self.components.len() * pairs.len(),
            self.components
                .iter()
                .flat_map(|c| pairs.iter().map(|&(j, k)| c.cov[(j, k)]).collect::<Vec<_>>()),
        )
    }

    pub fn correlations(&self, component: usize) -> Vec<f64> {
        let cov = &self.components[component].cov;
        covariance_pairs(self.n_assets())
            .iter()
            .map(|&(j, k)| cov[(j, k)] / (cov[(j, j)] * cov[(k, k)]).sqrt())
            .collect()
    }

    /// Replaces the off-diagonal covariances without revalidating.
    pub(crate) fn set_covariances(&mut self, params: &DVector<f64>) {
        let pairs = covariance_pairs(self.n_assets());
        for (c, comp) in self.components.iter_mut().enumerate() {
            for (p, &(j, k)) in pairs.iter().enumerate() {
                let v = params[c * pairs.len() + p];
                comp.cov[(j, k)] = v;
                comp.cov[(k, j)] = v;
            }
        }
    }

    pub(crate) fn components_mut(&mut self) -> &mut [JointComponent] {
        &mut self.components
    }

    /// Keeps the listed component positions with new probabilities.
    pub(crate) fn retain_with_probs(&mut self, keep: &[usize], probs: &[f64]) {
        let mut kept: Vec<JointComponent> = keep.iter().map(|&i| self.components[i].clone()).collect();
        for (c, &p) in kept.iter_mut().zip(probs) {
            c.prob = p;
        }
        self.components = kept;
    }
}

/// Mean vector and diagonal covariance named by a cell's marginal components.
fn pinned_moments(grid: &CellGrid, marginals: &[UnivariateMixture], cell: usize) -> (DVector<f64>, DMatrix<f64>) {
    let tuple = grid.tuple_of(cell);
    let n = marginals.len();
    let mean = DVector::from_fn(n, |j, _| marginals[j].components()[tuple[j]].mean);
    let cov = DMatrix::from_fn(n, n, |j, k| if j == k { marginals[j].components()[tuple[j]].std.powi(2) } else { 0.0 });
    (mean, cov)
}
