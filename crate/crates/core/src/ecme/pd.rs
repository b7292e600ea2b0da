//! Positive-definiteness checks and covariance ridge repair.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const REPAIR_ITER_CAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdThresholds {
    pub min_eigenvalue: f64,
    pub min_det: f64,
}

impl Default for PdThresholds {
    fn default() -> Self {
        Self {
            min_eigenvalue: 1e-13,
            min_det: 1e-13,
        }
    }
}

fn check_symmetric(cov: &DMatrix<f64>) -> Result<()> {
    if !cov.is_square() {
        return Err(Error::NotSymmetric);
    }
    let scale = cov.amax().max(1.0);
    for j in 0..cov.nrows() {
        for k in j + 1..cov.ncols() {
            if (cov[(j, k)] - cov[(k, j)]).abs() > SYMMETRY_TOL * scale || !cov[(j, k)].is_finite() {
                return Err(Error::NotSymmetric);
            }
        }
    }
    Ok(())
}

/// All eigenvalues above the floor and the determinant above its floor.
pub fn is_positive_definite(cov: &DMatrix<f64>, pd: &PdThresholds) -> Result<bool> {
    check_symmetric(cov)?;
    if cov.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    let det: f64 = eig.eigenvalues.iter().product();
    Ok(min > pd.min_eigenvalue && det > pd.min_det)
}

/// Shrinks off-diagonals by `1 + i * mult` (with `mult` growing tenfold
/// every hundred tries) until the matrix is positive definite. The diagonal
/// is never touched.
pub fn ridge_repair(cov: &DMatrix<f64>, multiplier: f64, pd: &PdThresholds) -> Result<DMatrix<f64>> {
    check_symmetric(cov)?;
    if (0..cov.nrows()).any(|j| !(cov[(j, j)] > 0.0)) {
        return Err(Error::Domain("ridge repair needs a positive diagonal".into()));
    }
    if !(multiplier > 0.0) {
        return Err(Error::Domain("ridge multiplier must be positive".into()));
    }
    if is_positive_definite(cov, pd)? {
        return Ok(cov.clone());
    }
    let mut mult = multiplier;
    let mut out = cov.clone();
    for i in 1..=REPAIR_ITER_CAP {
        if i % 100 == 0 {
            mult *= 10.0;
        }
        let scale = 1.0 + i as f64 * mult;
        for j in 0..cov.nrows() {
            for k in 0..cov.ncols() {
                if j != k {
                    out[(j, k)] = cov[(j, k)] / scale;
                }
            }
        }
        if is_positive_definite(&out, pd)? {
            return Ok(out);
        }
    }
    Err(Error::NotPositiveDefinite)
}
