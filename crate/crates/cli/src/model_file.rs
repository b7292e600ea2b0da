//! TOML persistence for joint mixtures.
//!
//! Floats are written in shortest round-trip form, so a saved model reloads
//! bit-exactly. Regime indices are 1-based, listed per asset.

use std::path::Path;

use regimix::ecme::{covariance_pairs, JointMixture};
use regimix::grid::CellGrid;
use regimix::stats::UnivariateMixture;
use serde::{Deserialize, Serialize};

use crate::error::{read_text, write_text, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalRecord {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub regimes: Vec<usize>,
    pub probability: f64,
    /// Off-diagonal covariances in (0,1), (0,2), .., (1,2), .. order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariances: Option<Vec<f64>>,
    /// Accepted on input when `covariances` is absent. Written for reading only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlations: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_likelihood: Option<f64>,
    pub marginals: Vec<MarginalRecord>,
    pub components: Vec<ComponentRecord>,
}

impl ModelFile {
    pub fn from_model(model: &JointMixture, log_likelihood: Option<f64>) -> Self {
        let marginals = model
            .marginals()
            .iter()
            .map(|m| MarginalRecord {
                weights: m.weights(),
                means: m.means(),
                stds: m.stds(),
            })
            .collect();
        let pairs = covariance_pairs(model.n_assets());
        let components = model
            .components()
            .iter()
            .enumerate()
            .map(|(i, c)| ComponentRecord {
                regimes: model.grid().tuple_of(c.cell).iter().map(|r| r + 1).collect(),
                probability: c.prob,
                covariances: Some(pairs.iter().map(|&(j, k)| c.cov[(j, k)]).collect()),
                correlations: Some(model.correlations(i)),
            })
            .collect();
        Self {
            log_likelihood,
            marginals,
            components,
        }
    }

    pub fn to_model(&self) -> CliResult<JointMixture> {
        if self.marginals.is_empty() {
            return Err(CliError::schema("marginals", "at least one asset required"));
        }
        let mut marginals = Vec::with_capacity(self.marginals.len());
        // file order -> sorted order used by the mixture type
        let mut relabel = Vec::with_capacity(self.marginals.len());
        for (j, m) in self.marginals.iter().enumerate() {
            let mix = UnivariateMixture::from_parts(&m.weights, &m.means, &m.stds).map_err(|e| CliError::schema(&format!("marginals[{j}]"), e.to_string()))?;
            let mut order: Vec<usize> = (0..m.means.len()).collect();
            order.sort_by(|&a, &b| m.means[a].total_cmp(&m.means[b]).then(m.stds[a].total_cmp(&m.stds[b])));
            let mut rank = vec![0; order.len()];
            for (r, &i) in order.iter().enumerate() {
                rank[i] = r;
            }
            relabel.push(rank);
            marginals.push(mix);
        }
        let sizes: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
        let grid = CellGrid::new(&sizes)?;
        let pairs = covariance_pairs(sizes.len());
        let mut cells = Vec::with_capacity(self.components.len());
        let mut off = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            let field = format!("components[{i}]");
            if c.regimes.len() != sizes.len() {
                return Err(CliError::schema(&field, "one regime per asset required"));
            }
            let mut tuple = Vec::with_capacity(sizes.len());
            for (j, &r) in c.regimes.iter().enumerate() {
                if r == 0 || r > sizes[j] {
                    return Err(CliError::schema(&field, format!("regime {r} out of range for asset {}", j + 1)));
                }
                tuple.push(relabel[j][r - 1]);
            }
            let cell = grid.cell_of(&tuple)?;
            let tuple_stds: Vec<f64> = tuple.iter().enumerate().map(|(j, &r)| marginals[j].stds()[r]).collect();
            let values = match (&c.covariances, &c.correlations) {
                (Some(cov), _) => cov.clone(),
                (None, Some(rho)) => {
                    if rho.len() != pairs.len() {
                        return Err(CliError::schema(&field, "wrong number of correlations"));
                    }
                    pairs.iter().zip(rho).map(|(&(j, k), r)| r * tuple_stds[j] * tuple_stds[k]).collect()
                }
                (None, None) if pairs.is_empty() => Vec::new(),
                (None, None) => return Err(CliError::schema(&field, "covariances or correlations required")),
            };
            if values.len() != pairs.len() {
                return Err(CliError::schema(&field, "wrong number of covariances"));
            }
            cells.push((cell, c.probability));
            off.push(values);
        }
        Ok(JointMixture::new(grid, marginals, &cells, &off)?)
    }
}

pub fn save_model(path: &Path, model: &JointMixture, log_likelihood: Option<f64>) -> CliResult<()> {
    let text = toml::to_string(&ModelFile::from_model(model, log_likelihood)).map_err(|e| CliError::schema("model", e.to_string()))?;
    write_text(path, &text)
}

pub fn parse_model_str(text: &str) -> CliResult<ModelFile> {
    toml::from_str(text).map_err(|e| CliError::schema("model", e.message().to_string()))
}

pub fn load_model(path: &Path) -> CliResult<JointMixture> {
    parse_model_str(&read_text(path)?)?.to_model()
}
