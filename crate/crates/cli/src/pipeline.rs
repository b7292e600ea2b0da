//! Marginals, structure LPs and ECME, end to end.

use std::fmt::Write as _;
use std::path::Path;

use regimix::ecme::{ecme_fit, mixture_covariance, normal_baseline, EcmeFit, JointMixture, NormalBaseline};
use regimix::em::{log_likelihood, EMFitResult};
use regimix::exec::child_seed;
use regimix::grid::{tabulate, AssignmentTable, CellGrid, ReturnsPanel};
use regimix::lp::{min_ssd_structure, minimax_structure, reduce_constraints, StructureSolution};
use regimix::selection::{select_components, Direction, SelectionTrace};
use regimix::stats::{free_params_joint, free_params_univariate, information_criteria, mixture_moments, ICReport};

use crate::control::ControlConfig;
use crate::error::{write_text, CliError, CliResult};
use crate::model_file::save_model;

#[derive(Debug, Clone)]
pub struct JointCandidate {
    pub label: &'static str,
    pub structure: StructureSolution,
    pub fit: EcmeFit,
    pub ic: ICReport,
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub selections: Vec<SelectionTrace>,
    pub table: Option<AssignmentTable>,
    pub candidates: Vec<JointCandidate>,
    pub baseline: Option<(NormalBaseline, ICReport)>,
    pub best: JointMixture,
    pub best_log_likelihood: f64,
}

fn chosen_fit(trace: &SelectionTrace) -> &EMFitResult {
    &trace.fits_by_g[&trace.chosen_g]
}

/// Runs every fitting stage without touching the filesystem.
pub fn fit_models(cfg: &ControlConfig, panel: &ReturnsPanel) -> CliResult<PipelineReport> {
    if panel.n_assets() != cfg.n_assets || panel.len() != cfg.n_timepoints {
        return Err(CliError::Data(format!(
            "panel is {}x{}, control expects {}x{}",
            panel.len(),
            panel.n_assets(),
            cfg.n_timepoints,
            cfg.n_assets
        )));
    }
    let sel_cfg = cfg.selection();
    let selections = (0..cfg.n_assets)
        .map(|j| select_components(&panel.column(j), &sel_cfg, child_seed(cfg.seed, j as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let marginals: Vec<_> = selections.iter().map(|s| chosen_fit(s).mixture.clone()).collect();
    let sizes: Vec<usize> = marginals.iter().map(|m| m.len()).collect();
    let grid = CellGrid::new(&sizes)?;

    if cfg.n_assets == 1 {
        let cells: Vec<(usize, f64)> = marginals[0].weights().into_iter().enumerate().collect();
        let off = vec![Vec::new(); cells.len()];
        let best = JointMixture::new(grid, marginals, &cells, &off)?;
        let ll = chosen_fit(&selections[0]).log_likelihood;
        return Ok(PipelineReport {
            selections,
            table: None,
            candidates: Vec::new(),
            baseline: None,
            best,
            best_log_likelihood: ll,
        });
    }

    let table = tabulate(panel, &marginals)?;
    let structures = [
        ("minimax", minimax_structure(&table, &marginals, &cfg.lp)?),
        ("min_ssd", min_ssd_structure(&table, &marginals, &cfg.lp)?),
    ];
    let ecme_cfg = cfg.ecme();
    let mut candidates = Vec::with_capacity(structures.len());
    for (i, (label, structure)) in structures.into_iter().enumerate() {
        let start = JointMixture::from_structure(grid.clone(), marginals.clone(), &structure)?;
        let cons = reduce_constraints(&grid, &marginals, &start.cells())?;
        let fit = ecme_fit(panel, &start, &cons, &ecme_cfg, child_seed(cfg.seed, 1000 + i as u64))?;
        let params = free_params_joint(&sizes, fit.model.len(), fit.constraints.n_rows());
        let ic = information_criteria(fit.log_likelihood, params, panel.len())?;
        candidates.push(JointCandidate { label, structure, fit, ic });
    }
    let base = normal_baseline(panel)?;
    let n = cfg.n_assets;
    let base_ic = information_criteria(base.log_likelihood, n + n * (n + 1) / 2, panel.len())?;
    // ties keep the first (minimax) start
    let best_idx = (1..candidates.len()).fold(0, |b, i| {
        if candidates[i].fit.log_likelihood > candidates[b].fit.log_likelihood {
            i
        } else {
            b
        }
    });
    let best = candidates[best_idx].fit.model.clone();
    let best_log_likelihood = candidates[best_idx].fit.log_likelihood;
    Ok(PipelineReport {
        selections,
        table: Some(table),
        candidates,
        baseline: Some((base, base_ic)),
        best,
        best_log_likelihood,
    })
}

fn ic_line(ic: &ICReport) -> String {
    format!(
        "LL {} params {} AIC {} AICC {} BIC {}",
        ic.log_likelihood, ic.free_params, ic.aic, ic.aicc, ic.bic
    )
}

fn write_joint(out: &mut String, model: &JointMixture) {
    for (i, c) in model.components().iter().enumerate() {
        let regimes: Vec<String> = model.grid().tuple_of(c.cell).iter().map(|r| (r + 1).to_string()).collect();
        let _ = writeln!(
            out,
            "  cell ({}) prob {} det {} correlations {:?}",
            regimes.join(","),
            c.prob,
            c.cov.determinant(),
            model.correlations(i)
        );
    }
    let (_, corr) = mixture_covariance(model);
    let _ = writeln!(out, "  overall correlations:");
    for r in corr.row_iter() {
        let vals: Vec<String> = r.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "    {}", vals.join(" "));
    }
}

/// Human-readable report. Numbers use shortest round-trip formatting.
pub fn render_report(report: &PipelineReport, panel: &ReturnsPanel) -> CliResult<String> {
    let mut out = String::new();
    let t = panel.len();
    for (j, sel) in report.selections.iter().enumerate() {
        let data = panel.column(j);
        let _ = writeln!(out, "== asset {} ==", j + 1);
        for (g, fit) in &sel.fits_by_g {
            let ic = information_criteria(fit.log_likelihood, free_params_univariate(*g), t)?;
            let m = &fit.mixture;
            let moments = mixture_moments(m);
            let _ = writeln!(out, "g={g} status {:?} {}", fit.status, ic_line(&ic));
            let _ = writeln!(out, "  weights {:?}\n  means {:?}\n  stds {:?}", m.weights(), m.means(), m.stds());
            let _ = writeln!(
                out,
                "  mean {} std {} skewness {} kurtosis {}",
                moments.mean, moments.std, moments.skewness, moments.kurtosis
            );
        }
        for test in &sel.tests {
            let dir = match test.direction {
                Direction::Forward => "forward",
                Direction::Backward => "backward",
            };
            let _ = writeln!(
                out,
                "test {dir} {} vs {}: lambda {} p {} alpha {} rejected {} valid {}",
                test.h0, test.h1, test.lambda_obs, test.p_value, test.alpha_used, test.rejected, test.valid_samples
            );
        }
        let chosen = &sel.fits_by_g[&sel.chosen_g];
        let _ = writeln!(out, "chosen g={} LL {}\n", sel.chosen_g, log_likelihood(&data, &chosen.mixture)?);
    }
    if let Some(table) = &report.table {
        let _ = writeln!(out, "== cell counts ==");
        for (cell, count) in table.counts.iter().enumerate() {
            let regimes: Vec<String> = table.grid.tuple_of(cell).iter().map(|r| (r + 1).to_string()).collect();
            let _ = writeln!(out, "({}) {count} {}", regimes.join(","), table.probabilities[cell]);
        }
        let _ = writeln!(out);
    }
    for cand in &report.candidates {
        let _ = writeln!(out, "== {} structure ==", cand.label);
        let _ = writeln!(out, "objective {} probs {:?}", cand.structure.objective, cand.structure.probs);
        let _ = writeln!(
            out,
            "ECME outer iterations {} converged {}",
            cand.fit.trace.iterations.len(),
            cand.fit.trace.converged
        );
        let _ = writeln!(out, "{}", ic_line(&cand.ic));
        write_joint(&mut out, &cand.fit.model);
        let _ = writeln!(out);
    }
    if let Some((base, ic)) = &report.baseline {
        let _ = writeln!(out, "== AIC comparison ==");
        let _ = writeln!(out, "multivariate normal: {}", ic_line(ic));
        let _ = writeln!(out, "  mean {:?}", base.mean.as_slice());
        for cand in &report.candidates {
            let verdict = if cand.ic.aic < ic.aic { "mixture preferred" } else { "normal preferred" };
            let _ = writeln!(out, "{}: AIC {} vs {} ({verdict})", cand.label, cand.ic.aic, ic.aic);
        }
    }
    let _ = writeln!(out, "best log-likelihood {}", report.best_log_likelihood);
    Ok(out)
}

fn write_outputs(report: &PipelineReport, panel: &ReturnsPanel, out_dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_text(&out_dir.join("output.txt"), &render_report(report, panel)?)?;
    for cand in &report.candidates {
        save_model(
            &out_dir.join(format!("model_{}.toml", cand.label)),
            &cand.fit.model,
            Some(cand.fit.log_likelihood),
        )?;
    }
    save_model(&out_dir.join("model.toml"), &report.best, Some(report.best_log_likelihood))
}

/// Fits, then writes `output.txt` and model files to `out_dir`. A failure is
/// also recorded under `out_dir/issues/`.
pub fn run_pipeline(cfg: &ControlConfig, panel: &ReturnsPanel, out_dir: &Path) -> CliResult<PipelineReport> {
    let result = fit_models(cfg, panel).and_then(|r| write_outputs(&r, panel, out_dir).map(|_| r));
    if let Err(e) = &result {
        let issues = out_dir.join("issues");
        if std::fs::create_dir_all(&issues).is_ok() {
            let _ = std::fs::write(issues.join("error.txt"), format!("{}: {e}\n", e.class()));
        }
    }
    result
}
