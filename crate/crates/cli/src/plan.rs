//! Decumulation plan files (TOML).
//!
//! ```toml
//! withdrawal_rate = 0.04
//! horizon = 30                  # or horizon_pmf = [0.0, ...] indexed from t = 0
//! weights = [0.3, 0.2, 0.5]     # or weights_by_period = [[...], ...]
//! expenses = [0.0015, 0.0025, 0.002]
//! ```

use std::path::Path;

use regimix::sim::{Allocation, DecumulationPlan, Horizon, PortfolioSpec};
use serde::Deserialize;

use crate::error::{read_text, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub withdrawal_rate: f64,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub horizon_pmf: Option<Vec<f64>>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default)]
    pub weights_by_period: Option<Vec<Vec<f64>>>,
    pub expenses: Vec<f64>,
}

impl PlanFile {
    pub fn to_plan(&self) -> CliResult<DecumulationPlan> {
        let horizon = match (self.horizon, &self.horizon_pmf) {
            (Some(t), None) => Horizon::Fixed(t),
            (None, Some(pmf)) => Horizon::Random(pmf.clone()),
            _ => return Err(CliError::schema("horizon", "give exactly one of horizon and horizon_pmf")),
        };
        let allocation = match (&self.weights, &self.weights_by_period) {
            (Some(w), None) => Allocation::Constant(w.clone()),
            (None, Some(w)) => Allocation::PerPeriod(w.clone()),
            _ => return Err(CliError::schema("weights", "give exactly one of weights and weights_by_period")),
        };
        let portfolio = PortfolioSpec::new(allocation, self.expenses.clone()).map_err(|e| CliError::schema("weights", e.to_string()))?;
        DecumulationPlan::new(self.withdrawal_rate, horizon, portfolio).map_err(|e| CliError::schema("withdrawal_rate", e.to_string()))
    }
}

pub fn parse_plan_str(text: &str) -> CliResult<DecumulationPlan> {
    let file: PlanFile = toml::from_str(text).map_err(|e| CliError::schema("plan", e.message().to_string()))?;
    file.to_plan()
}

pub fn load_plan(path: &Path) -> CliResult<DecumulationPlan> {
    parse_plan_str(&read_text(path)?)
}
