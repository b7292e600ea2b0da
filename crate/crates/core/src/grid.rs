//! Bayes assignment of observations to marginal components and the factorial
//! cell grid built from them.

use crate::em::posterior_probs;
use crate::error::{Error, Result};
use crate::exec;
use crate::stats::UnivariateMixture;

/// Returns panel: `rows[t][j]` is the return of asset `j` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    rows: Vec<Vec<f64>>,
    n_assets: usize,
}

impl ReturnsPanel {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_assets = rows.first().map_or(0, |r| r.len());
        if n_assets == 0 {
            return Err(Error::Domain("panel needs at least one row and one asset".into()));
        }
        if rows.iter().any(|r| r.len() != n_assets) {
            return Err(Error::Domain("ragged returns panel".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite return".into()));
        }
        Ok(Self { rows, n_assets })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[j]).collect()
    }

    /// Appends extra observations after the existing rows.
    pub fn with_rows(&self, extra: &[Vec<f64>]) -> Result<Self> {
        let mut rows = self.rows.clone();
        rows.extend(extra.iter().cloned());
        Self::new(rows)
    }
}

/// Full factorial of per-asset components, enumerated with the last asset
/// cycling fastest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellGrid {
    comps_per_asset: Vec<usize>,
    cells: Vec<Vec<usize>>,
}

impl CellGrid {
    pub fn new(comps_per_asset: &[usize]) -> Result<Self> {
        if comps_per_asset.is_empty() || comps_per_asset.contains(&0) {
            return Err(Error::Domain("every asset needs at least one component".into()));
        }
        let total: usize = comps_per_asset.iter().product();
        let mut cells = Vec::with_capacity(total);
        let mut tuple = vec![0usize; comps_per_asset.len()];
        for _ in 0..total {
            cells.push(tuple.clone());
            for j in (0..tuple.len()).rev() {
                tuple[j] += 1;
                if tuple[j] < comps_per_asset[j] {
                    break;
                }
                tuple[j] = 0;
            }
        }
        Ok(Self {
            comps_per_asset: comps_per_asset.to_vec(),
            cells,
        })
    }

    pub fn comps_per_asset(&self) -> &[usize] {
        &self.comps_per_asset
    }

    pub fn n_assets(&self) -> usize {
        self.comps_per_asset.len()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.cells
    }

    pub fn tuple_of(&self, cell: usize) -> &[usize] {
        &self.cells[cell]
    }

    /// Inverse of the enumeration (mixed-radix decoding).
    pub fn cell_of(&self, tuple: &[usize]) -> Result<usize> {
        if tuple.len() != self.comps_per_asset.len() {
            return Err(Error::CellNotFound(tuple.to_vec()));
        }
        let mut id = 0;
        for (&c, &g) in tuple.iter().zip(&self.comps_per_asset) {
            if c >= g {
                return Err(Error::CellNotFound(tuple.to_vec()));
            }
            id = id * g + c;
        }
        Ok(id)
    }

    /// Indicator I(c, j, i): asset `j` sits in component `i` within `cell`.
    pub fn indicator(&self, cell: usize, asset: usize, component: usize) -> bool {
        self.cells[cell][asset] == component
    }
}

/// Bayes assignments of a panel to the cell grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentTable {
    pub grid: CellGrid,
    /// `components[t][j]`: assigned component of asset `j` at time `t`.
    pub components: Vec<Vec<usize>>,
    pub cell_ids: Vec<usize>,
    pub counts: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl AssignmentTable {
    /// Builds a table directly from cell counts (no per-time detail).
    pub fn from_counts(grid: CellGrid, counts: Vec<usize>) -> Result<Self> {
        if counts.len() != grid.len() {
            return Err(Error::Domain("one count per cell required".into()));
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Err(Error::Domain("counts sum to zero".into()));
        }
        let probabilities = counts.iter().map(|&n| n as f64 / total as f64).collect();
        Ok(Self {
            grid,
            components: Vec::new(),
            cell_ids: Vec::new(),
            counts,
            probabilities,
        })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Component with the largest posterior probability; ties go to the lowest index.
pub fn assign_component(x: f64, mix: &UnivariateMixture) -> Result<usize> {
    let post = posterior_probs(x, mix)?;
    let mut best = 0;
    for (i, &p) in post.iter().enumerate().skip(1) {
        if p > post[best] {
            best = i;
        }
    }
    Ok(best)
}

pub fn tabulate(panel: &ReturnsPanel, marginals: &[UnivariateMixture]) -> Result<AssignmentTable> {
    if panel.n_assets() != marginals.len() {
        return Err(Error::Domain(format!(
            "panel has {} assets but {} marginals were given",
            panel.n_assets(),
            marginals.len()
        )));
    }
    let comps: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
    let grid = CellGrid::new(&comps)?;
    let assigned = exec::map_indexed(panel.len(), |t| {
        panel.rows()[t]
            .iter()
            .zip(marginals)
            .map(|(&x, m)| assign_component(x, m))
            .collect::<Result<Vec<usize>>>()
    });
    let components: Vec<Vec<usize>> = assigned.into_iter().collect::<Result<_>>()?;
    let cell_ids: Vec<usize> = components.iter().map(|c| grid.cell_of(c)).collect::<Result<_>>()?;
    let mut counts = vec![0usize; grid.len()];
    for &c in &cell_ids {
        counts[c] += 1;
    }
    let t = panel.len() as f64;
    let probabilities = counts.iter().map(|&n| n as f64 / t).collect();
    Ok(AssignmentTable {
        grid,
        components,
        cell_ids,
        counts,
        probabilities,
    })
}
