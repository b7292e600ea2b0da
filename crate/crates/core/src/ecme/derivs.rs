//! Component densities, the joint log-likelihood and its exact derivatives
//! with respect to the off-diagonal covariances.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use super::model::{covariance_pairs, JointComponent, JointMixture};
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::ReturnsPanel;

/// Inverse and log normalizing constant of one component.
#[derive(Debug, Clone)]
pub(crate) struct Factor {
    pub inv: DMatrix<f64>,
    pub log_norm: f64,
}

impl Factor {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let n = cov.nrows();
        let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(Self {
            inv: chol.inverse(),
            log_norm: -0.5 * (n as f64 * (2.0 * PI).ln() + log_det),
        })
    }

    pub fn pdf(&self, x: &[f64], mean: &DVector<f64>) -> f64 {
        let d = DVector::from_fn(mean.len(), |i, _| x[i] - mean[i]);
        (self.log_norm - 0.5 * d.dot(&(&self.inv * &d))).exp()
    }
}

pub fn mvn_pdf(x: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() || cov.nrows() != mean.len() || !cov.is_square() {
        return Err(Error::Domain("dimension mismatch".into()));
    }
    Ok(Factor::new(cov)?.pdf(x, mean))
}

/// `comp[t][c]` is f^c(x_t); `mix[t]` is the mixture density.
#[derive(Debug, Clone)]
pub(crate) struct Densities {
    pub comp: Vec<Vec<f64>>,
    pub mix: Vec<f64>,
}

pub(crate) fn factors(model: &JointMixture) -> Result<Vec<Factor>> {
    model.components().iter().map(|c| Factor::new(&c.cov)).collect()
}

pub(crate) fn densities(panel: &ReturnsPanel, components: &[JointComponent], factors: &[Factor]) -> Densities {
    let comp: Vec<Vec<f64>> = exec::map_indexed(panel.len(), |t| {
        let x = &panel.rows()[t];
        components.iter().zip(factors).map(|(c, f)| f.pdf(x, &c.mean)).collect()
    });
    let mix = comp.iter().map(|row| row.iter().zip(components).map(|(f, c)| c.prob * f).sum()).collect();
    Densities { comp, mix }
}

pub(crate) fn sum_log(mix: &[f64]) -> Result<f64> {
    let mut ll = 0.0;
    for (index, &f) in mix.iter().enumerate() {
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::ZeroDensity { index });
        }
        ll += f.ln();
    }
    Ok(ll)
}

fn check_panel(panel: &ReturnsPanel, model: &JointMixture) -> Result<()> {
    if panel.n_assets() != model.n_assets() {
        return Err(Error::Domain("panel and model disagree on asset count".into()));
    }
    Ok(())
}

pub fn joint_log_likelihood(panel: &ReturnsPanel, model: &JointMixture) -> Result<f64> {
    check_panel(panel, model)?;
    let f = factors(model)?;
    sum_log(&densities(panel, model.components(), &f).mix)
}

/// Score of ln f^c with respect to the covariance shared by assets `j` and `k`.
pub fn q_term(x: &[f64], comp: &JointComponent, j: usize, k: usize) -> Result<f64> {
    let n = comp.mean.len();
    if j == k || j >= n || k >= n || x.len() != n {
        return Err(Error::Domain(format!("q_term needs distinct assets, got ({j}, {k})")));
    }
    let f = Factor::new(&comp.cov)?;
    let w = weighted_residual(x, comp, &f);
    Ok(w[j] * w[k] - f.inv[(j, k)])
}

/// Precision times centred observation.
fn weighted_residual(x: &[f64], comp: &JointComponent, f: &Factor) -> DVector<f64> {
    let d = DVector::from_fn(comp.mean.len(), |i, _| x[i] - comp.mean[i]);
    &f.inv * d
}

/// Per time point: each component's score vector over its covariance pairs.
fn scores(panel: &ReturnsPanel, model: &JointMixture, f: &[Factor]) -> Vec<Vec<Vec<f64>>> {
    let pairs = covariance_pairs(model.n_assets());
    exec::map_indexed(panel.len(), |t| {
        let x = &panel.rows()[t];
        model
            .components()
            .iter()
            .zip(f)
            .map(|(c, fac)| {
                let w = weighted_residual(x, c, fac);
                pairs.iter().map(|&(j, k)| w[j] * w[k] - fac.inv[(j, k)]).collect()
            })
            .collect()
    })
}

pub fn step2_gradient(panel: &ReturnsPanel, model: &JointMixture) -> Result<DVector<f64>> {
    check_panel(panel, model)?;
    let f = factors(model)?;
    let dens = densities(panel, model.components(), &f);
    sum_log(&dens.mix)?;
    let q = scores(panel, model, &f);
    let per = covariance_pairs(model.n_assets()).len();
    let mut g = DVector::zeros(model.len() * per);
    for t in 0..panel.len() {
        for (c, comp) in model.components().iter().enumerate() {
            let weight = comp.prob * dens.comp[t][c] / dens.mix[t];
            for p in 0..per {
                g[c * per + p] += weight * q[t][c][p];
            }
        }
    }
    Ok(g)
}

/// Derivative of the score for pair (j, k) with respect to covariance (r, s).
fn score_derivative(inv: &DMatrix<f64>, w: &DVector<f64>, (j, k): (usize, usize), (r, s): (usize, usize)) -> f64 {
    let dw = |a: usize| -(inv[(a, r)] * w[s] + inv[(a, s)] * w[r]);
    dw(j) * w[k] + w[j] * dw(k) + inv[(j, r)] * inv[(s, k)] + inv[(j, s)] * inv[(r, k)]
}

pub fn step2_hessian(panel: &ReturnsPanel, model: &JointMixture) -> Result<DMatrix<f64>> {
    check_panel(panel, model)?;
    let f = factors(model)?;
    let dens = densities(panel, model.components(), &f);
    sum_log(&dens.mix)?;
    let pairs = covariance_pairs(model.n_assets());
    let per = pairs.len();
    let g = model.len();
    let dim = g * per;
    let partials: Vec<DMatrix<f64>> = exec::map_indexed(panel.len(), |t| {
        let x = &panel.rows()[t];
        let fx = dens.mix[t];
        // a[c][p] = p_c f^c Q_cp / f
        let mut a = vec![vec![0.0; per]; g];
        let mut h = DMatrix::zeros(dim, dim);
        for (c, comp) in model.components().iter().enumerate() {
            let w = weighted_residual(x, comp, &f[c]);
            let q: Vec<f64> = pairs.iter().map(|&(j, k)| w[j] * w[k] - f[c].inv[(j, k)]).collect();
            let share = comp.prob * dens.comp[t][c] / fx;
            for p in 0..per {
                a[c][p] = share * q[p];
            }
            for p in 0..per {
                for r in 0..per {
                    let second = q[p] * q[r] + score_derivative(&f[c].inv, &w, pairs[p], pairs[r]);
                    h[(c * per + p, c * per + r)] += share * second;
                }
            }
        }
        for c in 0..g {
            for d in 0..g {
                for p in 0..per {
                    for r in 0..per {
                        h[(c * per + p, d * per + r)] -= a[c][p] * a[d][r];
                    }
                }
            }
        }
        h
    });
    let mut h = partials.into_iter().fold(DMatrix::zeros(dim, dim), |acc, m| acc + m);
    // symmetrize away summation-order noise
    for i in 0..dim {
        for j in i + 1..dim {
            let v = 0.5 * (h[(i, j)] + h[(j, i)]);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(h)
}

/// Overall covariance and correlation of the mixture.
pub fn mixture_covariance(model: &JointMixture) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.n_assets();
    let mut mean = DVector::zeros(n);
    let mut second = DMatrix::zeros(n, n);
    for c in model.components() {
        mean += c.prob * &c.mean;
        second += c.prob * (&c.cov + &c.mean * c.mean.transpose());
    }
    let cov = second - &mean * mean.transpose();
    let corr = DMatrix::from_fn(n, n, |j, k| cov[(j, k)] / (cov[(j, j)] * cov[(k, k)]).sqrt());
    (cov, corr)
}

/// Single multivariate normal fitted by maximum likelihood, as a baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalBaseline {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub log_likelihood: f64,
}

pub fn normal_baseline(panel: &ReturnsPanel) -> Result<NormalBaseline> {
    let n = panel.n_assets();
    let t = panel.len() as f64;
    let mut mean = DVector::zeros(n);
    for row in panel.rows() {
        mean += DVector::from_column_slice(row);
    }
    mean /= t;
    let mut cov = DMatrix::zeros(n, n);
    for row in panel.rows() {
        let d = DVector::from_column_slice(row) - &mean;
        cov += &d * d.transpose();
    }
    cov /= t;
    let f = Factor::new(&cov)?;
    let log_likelihood = sum_log(&panel.rows().iter().map(|x| f.pdf(x, &mean)).collect::<Vec<_>>())?;
    Ok(NormalBaseline { mean, cov, log_likelihood })
}
