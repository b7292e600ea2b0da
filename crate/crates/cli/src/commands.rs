//! Sampling, ruin, stress and diagnostic commands.

use std::fmt::Write as _;

use regimix::diagnostics::{acf, default_max_lag, pacf, serial_correlation_test};
use regimix::ecme::JointMixture;
use regimix::exec::stream_rng;
use regimix::grid::ReturnsPanel;
use regimix::sim::{seed_black_swans, simulate_ruin, DecumulationPlan, JointSampler, RuinReport};

use crate::control::ControlConfig;
use crate::data::format_rows;
use crate::error::{CliError, CliResult};
use crate::pipeline::{fit_models, PipelineReport};

fn asset_header(n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("asset{j}")).collect()
}

/// `n` joint draws, one row each, under a header line.
pub fn sample_text(model: &JointMixture, n: usize, seed: u64) -> CliResult<String> {
    let sampler = JointSampler::new(model)?;
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| sampler.sample(&mut rng).iter().copied().collect()).collect();
    Ok(format_rows(&asset_header(model.n_assets()), &rows))
}

pub fn ruin_report(model: &JointMixture, plan: &DecumulationPlan, paths: usize, seed: u64) -> CliResult<RuinReport> {
    Ok(simulate_ruin(plan, model, paths, seed)?)
}

pub fn format_ruin(report: &RuinReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "periods {} paths {}", report.periods, report.paths);
    let _ = writeln!(out, "success_probability {} se {}", report.success_prob, report.success_se);
    let l = &report.longevity;
    let _ = writeln!(out, "longevity mean {} median {} modes {:?}", l.mean, l.median, l.modes);
    let _ = writeln!(out, "t ruin_in_period success_through_t");
    for (t, (r, s)) in report.ruin_by_period.iter().zip(&report.success_by_horizon).enumerate() {
        let _ = writeln!(out, "{} {r} {s}", t + 1);
    }
    out
}

#[derive(Debug, Clone)]
pub struct StressOutcome {
    pub before: PipelineReport,
    pub after: PipelineReport,
    pub ruin_before: RuinReport,
    pub ruin_after: RuinReport,
}

/// Fits the panel, appends `events`, refits, and compares ruin under `plan`.
pub fn stress_test(cfg: &ControlConfig, panel: &ReturnsPanel, events: &[Vec<f64>], plan: &DecumulationPlan, paths: usize) -> CliResult<StressOutcome> {
    let before = fit_models(cfg, panel)?;
    let stressed = seed_black_swans(panel, events)?;
    let stressed_cfg = ControlConfig {
        n_timepoints: stressed.len(),
        ..cfg.clone()
    };
    let after = fit_models(&stressed_cfg, &stressed)?;
    let ruin_before = ruin_report(&before.best, plan, paths, cfg.seed)?;
    let ruin_after = ruin_report(&after.best, plan, paths, cfg.seed)?;
    Ok(StressOutcome {
        before,
        after,
        ruin_before,
        ruin_after,
    })
}

pub fn format_stress(outcome: &StressOutcome, events: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "events {events}");
    let _ = writeln!(
        out,
        "log_likelihood before {} after {}",
        outcome.before.best_log_likelihood, outcome.after.best_log_likelihood
    );
    let _ = writeln!(
        out,
        "success_probability before {} after {}",
        outcome.ruin_before.success_prob, outcome.ruin_after.success_prob
    );
    let _ = writeln!(out, "\n== before ==\n{}", format_ruin(&outcome.ruin_before));
    let _ = writeln!(out, "== after ==\n{}", format_ruin(&outcome.ruin_after));
    out
}

/// ACF, PACF and a Ljung-Box test for every column.
pub fn diagnose_text(rows: &[Vec<f64>], max_lag: Option<usize>) -> CliResult<String> {
    let panel = ReturnsPanel::new(rows.to_vec())?;
    let lag = max_lag.unwrap_or_else(|| default_max_lag(panel.len()));
    if lag + 1 >= panel.len() {
        return Err(CliError::Data(format!("max lag {lag} too large for {} rows", panel.len())));
    }
    let mut out = String::new();
    for j in 0..panel.n_assets() {
        let x = panel.column(j);
        let a = acf(&x, lag)?;
        let p = pacf(&x, lag)?;
        let test = serial_correlation_test(&x, lag)?;
        let _ = writeln!(out, "== asset {} ==", j + 1);
        let _ = writeln!(out, "ljung_box statistic {} df {} p {}", test.statistic, test.degrees_of_freedom, test.p_value);
        let _ = writeln!(out, "lag acf pacf");
        for k in 1..=lag {
            let _ = writeln!(out, "{k} {} {}", a[k], p[k - 1]);
        }
    }
    Ok(out)
}
