//! Sampling from the joint mixture, stress seeding, portfolio return
//! mixtures and retirement ruin simulation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::ecme::{mixture_covariance, JointMixture};
use crate::em::sample_mixture;
use crate::error::{Error, Result};
use crate::exec;
use crate::grid::ReturnsPanel;
use crate::stats::{Component, UnivariateMixture};

const PATHS_PER_CHUNK: usize = 1024;

/// Inverse-CDF component choice; a draw on a boundary goes to the lower index.
pub fn sample_component(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u <= acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Multivariate normal sampler that rotates independent draws along the
/// covariance eigenvectors.
#[derive(Debug, Clone)]
pub struct MvnSampler {
    mean: DVector<f64>,
    transform: DMatrix<f64>,
}

impl MvnSampler {
    pub fn new(mean: DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::Domain("dimension mismatch".into()));
        }
        let eig = cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let scale = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
        Ok(Self {
            mean,
            transform: eig.eigenvectors * scale,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.mean + &self.transform * z
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut R) -> Result<DVector<f64>> {
    Ok(MvnSampler::new(mean.clone(), cov)?.sample(rng))
}

/// Draws a component, then a normal vector from it.
pub struct JointSampler {
    probs: Vec<f64>,
    samplers: Vec<MvnSampler>,
}

impl JointSampler {
    pub fn new(model: &JointMixture) -> Result<Self> {
        Ok(Self {
            probs: model.probabilities(),
            samplers: model
                .components()
                .iter()
                .map(|c| MvnSampler::new(c.mean.clone(), &c.cov))
                .collect::<Result<_>>()?,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let c = sample_component(&self.probs, rng.random());
        self.samplers[c].sample(rng)
    }
}

pub fn sample_joint<R: Rng + ?Sized>(model: &JointMixture, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    let s = JointSampler::new(model)?;
    Ok((0..n).map(|_| s.sample(rng).iter().copied().collect()).collect())
}

/// Appends hypothetical extreme observations to the historical panel.
pub fn seed_black_swans(panel: &ReturnsPanel, events: &[Vec<f64>]) -> Result<ReturnsPanel> {
    if events.iter().any(|e| e.len() != panel.n_assets()) {
        return Err(Error::Domain("event length differs from asset count".into()));
    }
    panel.with_rows(events)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Allocation {
    Constant(Vec<f64>),
    /// One weight vector per period, period 1 first.
    PerPeriod(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioSpec {
    allocation: Allocation,
    expenses: Vec<f64>,
}

fn check_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::Domain("weight vector length differs from asset count".into()));
    }
    if w.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Domain("negative weight".into()));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Domain(format!("weights sum to {total}")));
    }
    Ok(())
}

impl PortfolioSpec {
    pub fn new(allocation: Allocation, expenses: Vec<f64>) -> Result<Self> {
        let n = expenses.len();
        if n == 0 || expenses.iter().any(|e| !(*e >= 0.0 && *e < 1.0)) {
            return Err(Error::Domain("expenses must lie in [0, 1)".into()));
        }
        match &allocation {
            Allocation::Constant(w) => check_weights(w, n)?,
            Allocation::PerPeriod(ws) => {
                if ws.is_empty() {
                    return Err(Error::Domain("no periods".into()));
                }
                for w in ws {
                    check_weights(w, n)?;
                }
            }
        }
        Ok(Self { allocation, expenses })
    }

    pub fn constant(weights: Vec<f64>, expenses: Vec<f64>) -> Result<Self> {
        Self::new(Allocation::Constant(weights), expenses)
    }

    pub fn expenses(&self) -> &[f64] {
        &self.expenses
    }

    pub fn allocation(&self) -> &Allocation {
        &self.allocation
    }

    /// Weights in force during period `t` (1-based); the last vector persists.
    pub fn weights_at(&self, t: usize) -> &[f64] {
        match &self.allocation {
            Allocation::Constant(w) => w,
            Allocation::PerPeriod(ws) => &ws[(t.max(1) - 1).min(ws.len() - 1)],
        }
    }

    fn periods(&self) -> usize {
        match &self.allocation {
            Allocation::Constant(_) => 1,
            Allocation::PerPeriod(ws) => ws.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Horizon {
    Fixed(usize),
    /// `pmf[t]` is the probability the horizon equals `t`, from `t = 0`.
    Random(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecumulationPlan {
    pub withdrawal_rate: f64,
    pub horizon: Horizon,
    pub portfolio: PortfolioSpec,
}

impl DecumulationPlan {
    pub fn new(withdrawal_rate: f64, horizon: Horizon, portfolio: PortfolioSpec) -> Result<Self> {
        if !(withdrawal_rate >= 0.0) || !withdrawal_rate.is_finite() {
            return Err(Error::Domain("withdrawal rate must be nonnegative".into()));
        }
        match &horizon {
            Horizon::Fixed(t) if *t == 0 => return Err(Error::Domain("fixed horizon must be positive".into())),
            Horizon::Random(pmf) => {
                if pmf.iter().any(|p| !(*p >= 0.0)) || (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain("horizon probabilities must sum to one".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            withdrawal_rate,
            horizon,
            portfolio,
        })
    }

    /// Longest period that can matter.
    pub fn max_periods(&self) -> usize {
        match &self.horizon {
            Horizon::Fixed(t) => *t,
            Horizon::Random(pmf) => pmf.len().saturating_sub(1),
        }
    }
}

/// Distribution of the expense-adjusted portfolio return under `model`.
pub fn portfolio_return_mixture(model: &JointMixture, weights: &[f64], expenses: &[f64]) -> Result<UnivariateMixture> {
    let n = model.n_assets();
    if weights.len() != n || expenses.len() != n {
        return Err(Error::Domain("weights and expenses need one entry per asset".into()));
    }
    let a = DVector::from_fn(n, |i, _| weights[i] * (1.0 - expenses[i]));
    let total: f64 = model.components().iter().map(|c| c.prob).sum();
    let mut comps = Vec::with_capacity(model.len());
    for c in model.components() {
        let mean = a.dot(&c.mean);
        let var = a.dot(&(&c.cov * &a));
        if !(var > 0.0) {
            return Err(Error::Domain(format!("portfolio variance {var} not positive")));
        }
        comps.push(Component::new(c.prob / total, mean, var.sqrt()));
    }
    UnivariateMixture::new(comps)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RuinStep {
    Alive(f64),
    Ruined,
}

/// Advances the ruin factor by one period's return.
pub fn ruin_factor_step(rf: f64, r_hat: f64) -> RuinStep {
    if r_hat <= rf {
        RuinStep::Ruined
    } else {
        RuinStep::Alive(rf / (r_hat - rf))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongevityStats {
    /// Mean of min(longevity, T).
    pub mean: f64,
    pub median: f64,
    /// All most-likely longevities; `T` stands for "T or more".
    pub modes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuinReport {
    pub periods: usize,
    pub paths: usize,
    pub success_prob: f64,
    pub success_se: f64,
    /// Entry `t - 1` is the probability of ruin at period `t`.
    pub ruin_by_period: Vec<f64>,
    /// Entry `l` is P(longevity = l) for `l < T`.
    pub longevity_pmf: Vec<f64>,
    /// P(longevity >= T).
    pub longevity_tail: f64,
    pub longevity: LongevityStats,
    /// Success probability for each fixed horizon `1..=T`, index `t - 1`.
    pub success_by_horizon: Vec<f64>,
}

/// Mean, median and modes from integer counts over `0..=T` (last bucket is
/// the tail). Half-integer medians arise when a cumulative share is exactly
/// one half.
fn longevity_stats(counts: &[u64]) -> LongevityStats {
    let total: u64 = counts.iter().sum();
    let mean = counts.iter().enumerate().map(|(l, &c)| l as f64 * c as f64).sum::<f64>() / total as f64;
    let mut acc = 0;
    let mut median = (counts.len() - 1) as f64;
    for (l, &c) in counts.iter().enumerate() {
        acc += c;
        if 2 * acc == total {
            median = l as f64 + 0.5;
            break;
        }
        if 2 * acc > total {
            median = l as f64;
            break;
        }
    }
    let top = counts.iter().copied().max().unwrap_or(0);
    let modes = (0..counts.len()).filter(|&l| counts[l] == top).collect();
    LongevityStats { mean, median, modes }
}

/// Ruin simulation over `periods` with returns drawn by `draw(t, rng)`.
pub fn simulate_ruin_with<F>(withdrawal_rate: f64, periods: usize, n_paths: usize, seed: u64, draw: F) -> Result<RuinReport>
where
    F: Fn(usize, &mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    if periods == 0 || n_paths == 0 {
        return Err(Error::Domain("need at least one period and one path".into()));
    }
    let chunks = n_paths.div_ceil(PATHS_PER_CHUNK);
    let partial: Vec<Vec<u64>> = exec::map_indexed(chunks, |chunk| {
        let mut rng = exec::stream_rng(seed, chunk as u64);
        let mut counts = vec![0u64; periods + 1];
        let start = chunk * PATHS_PER_CHUNK;
        let end = (start + PATHS_PER_CHUNK).min(n_paths);
        for _ in start..end {
            let mut rf = withdrawal_rate;
            let mut longevity = periods;
            for t in 1..=periods {
                match ruin_factor_step(rf, draw(t, &mut rng)) {
                    RuinStep::Alive(next) => rf = next,
                    RuinStep::Ruined => {
                        longevity = t - 1;
                        break;
                    }
                }
            }
            counts[longevity] += 1;
        }
        counts
    });
    let mut counts = vec![0u64; periods + 1];
    for p in partial {
        for (a, b) in counts.iter_mut().zip(p) {
            *a += b;
        }
    }
    let n = n_paths as f64;
    let longevity_pmf: Vec<f64> = counts[..periods].iter().map(|&c| c as f64 / n).collect();
    let longevity_tail = counts[periods] as f64 / n;
    let mut success_by_horizon = Vec::with_capacity(periods);
    let mut survivors = n_paths as u64;
    for &c in &counts[..periods] {
        survivors -= c;
        success_by_horizon.push(survivors as f64 / n);
    }
    Ok(RuinReport {
        periods,
        paths: n_paths,
        success_prob: longevity_tail,
        success_se: (longevity_tail * (1.0 - longevity_tail) / n).sqrt(),
        ruin_by_period: longevity_pmf.clone(),
        longevity_pmf,
        longevity_tail,
        longevity: longevity_stats(&counts),
        success_by_horizon,
    })
}

/// Simulates the plan with i.i.d. per-period returns from the model.
/// For a random horizon the reported success probability averages over it.
pub fn simulate_ruin(plan: &DecumulationPlan, model: &JointMixture, n_paths: usize, seed: u64) -> Result<RuinReport> {
    let periods = plan.max_periods();
    if periods == 0 {
        return Err(Error::Domain("horizon has no periods".into()));
    }
    let mixtures: Vec<UnivariateMixture> = (1..=plan.portfolio.periods())
        .map(|t| portfolio_return_mixture(model, plan.portfolio.weights_at(t), plan.portfolio.expenses()))
        .collect::<Result<_>>()?;
    let mut report = simulate_ruin_with(plan.withdrawal_rate, periods, n_paths, seed, |t, rng| {
        sample_mixture(&mixtures[(t - 1).min(mixtures.len() - 1)], rng)
    })?;
    if let Horizon::Random(pmf) = &plan.horizon {
        let by_t: BTreeMap<usize, f64> = report.success_by_horizon.iter().enumerate().map(|(i, s)| (i + 1, *s)).collect();
        let ruin = random_horizon_ruin(&by_t, pmf)?;
        report.success_prob = 1.0 - ruin;
        report.success_se = (report.success_prob * ruin / n_paths as f64).sqrt();
    }
    Ok(report)
}

/// Ruin probability when the horizon itself is random.
pub fn random_horizon_ruin(success_by_t: &BTreeMap<usize, f64>, horizon_pmf: &[f64]) -> Result<f64> {
    let mut ruin = 0.0;
    for (t, &p) in horizon_pmf.iter().enumerate().skip(1) {
        if p == 0.0 {
            continue;
        }
        let s = success_by_t.get(&t).ok_or(Error::MissingHorizon(t))?;
        ruin += (1.0 - s) * p;
    }
    Ok(ruin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AllocationObjective {
    MaxSuccess,
    MinVariance,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AllocationSearch {
    /// Simplex grid resolution for the success search.
    pub grid_divisions: usize,
    pub paths: usize,
}

impl Default for AllocationSearch {
    fn default() -> Self {
        Self {
            grid_divisions: 20,
            paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub weights: Vec<f64>,
    /// Portfolio std for MinVariance, success probability for MaxSuccess.
    pub value: f64,
}

/// Minimizes `w' M w` over the simplex by solving the equality-constrained
/// problem on every support and keeping the best feasible one.
fn simplex_qp(m: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let n = m.nrows();
    if n > 16 {
        return Err(Error::Domain("support enumeration limited to 16 assets".into()));
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for mask in 1u32..(1 << n) {
        let support: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let k = support.len();
        let sub = DMatrix::from_fn(k, k, |r, c| m[(support[r], support[c])]);
        let Some(x) = sub.lu().solve(&DVector::from_element(k, 1.0)) else {
            continue;
        };
        let s: f64 = x.sum();
        if !(s.abs() > 1e-300) {
            continue;
        }
        let w_sub = x / s;
        if w_sub.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let mut w = vec![0.0; n];
        for (i, &j) in support.iter().enumerate() {
            w[j] = w_sub[i].max(0.0);
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
        let wv = DVector::from_column_slice(&w);
        let value = wv.dot(&(m * &wv));
        let better = match &best {
            None => true,
            Some((bw, bv)) => value < bv - 1e-15 || ((value - bv).abs() <= 1e-15 && w < *bw),
        };
        if better {
            best = Some((w, value));
        }
    }
    best.ok_or_else(|| Error::Internal("no feasible support".into()))
}

/// All weight vectors on the simplex with entries in multiples of `1/d`,
/// in lexicographic order.
fn simplex_grid(n: usize, d: usize) -> Vec<Vec<f64>> {
    fn rec(n: usize, left: usize, d: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.iter().map(|&k| k as f64 / d as f64).collect());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(n, left - k, d, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, d, d, &mut Vec::new(), &mut out);
    out
}

pub fn optimize_static_allocation(
    plan: &DecumulationPlan,
    model: &JointMixture,
    objective: AllocationObjective,
    search: &AllocationSearch,
    seed: u64,
) -> Result<AllocationResult> {
    let n = model.n_assets();
    let expenses = plan.portfolio.expenses();
    if n == 1 {
        let value = match objective {
            AllocationObjective::MinVariance => portfolio_std(model, &[1.0], expenses)?,
            AllocationObjective::MaxSuccess => simulate_ruin(plan, model, search.paths, seed)?.success_prob,
        };
        return Ok(AllocationResult { weights: vec![1.0], value });
    }
    match objective {
        AllocationObjective::MinVariance => {
            let (cov, _) = mixture_covariance(model);
            let d = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 1.0 - expenses[i]));
            let m = &d * cov * &d;
            let (weights, var) = simplex_qp(&m)?;
            Ok(AllocationResult {
                weights,
                value: var.max(0.0).sqrt(),
            })
        }
        AllocationObjective::MaxSuccess => {
            if search.grid_divisions == 0 || search.paths == 0 {
                return Err(Error::Domain("empty allocation search".into()));
            }
            let periods = plan.max_periods();
            // common random numbers: every candidate sees the same asset returns
            let sampler = JointSampler::new(model)?;
            let draws: Vec<Vec<DVector<f64>>> = exec::map_indexed(search.paths, |p| {
                let mut rng = exec::stream_rng(seed, p as u64);
                (0..periods).map(|_| sampler.sample(&mut rng)).collect()
            });
            let candidates = simplex_grid(n, search.grid_divisions);
            let scores: Vec<f64> = exec::map_indexed(candidates.len(), |i| {
                let a = DVector::from_fn(n, |j, _| candidates[i][j] * (1.0 - expenses[j]));
                let survived = draws
                    .iter()
                    .filter(|path| {
                        let mut rf = plan.withdrawal_rate;
                        path.iter().all(|x| match ruin_factor_step(rf, a.dot(x)) {
                            RuinStep::Alive(next) => {
                                rf = next;
                                true
                            }
                            RuinStep::Ruined => false,
                        })
                    })
                    .count();
                survived as f64 / search.paths as f64
            });
            let mut best = 0;
            for i in 1..scores.len() {
                if scores[i] > scores[best] {
                    best = i;
                }
            }
            Ok(AllocationResult {
                weights: candidates[best].clone(),
                value: scores[best],
            })
        }
    }
}

/// Analytic std of the portfolio return mixture.
pub fn portfolio_std(model: &JointMixture, weights: &[f64], expenses: &[f64]) -> Result<f64> {
    let mix = portfolio_return_mixture(model, weights, expenses)?;
    Ok(crate::stats::mixture_moments(&mix).std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{tabulate, CellGrid};
    use crate::stats::mixture_moments;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model2() -> JointMixture {
        let m1 = UnivariateMixture::from_parts(&[0.7, 0.3], &[1.05, 1.2], &[0.1, 0.2]).unwrap();
        let m2 = UnivariateMixture::normal(1.02, 0.05).unwrap();
        let grid = CellGrid::new(&[2, 1]).unwrap();
        JointMixture::from_correlations(grid, vec![m1, m2], &[(0, 0.7), (1, 0.3)], &[vec![0.4], vec![-0.3]]).unwrap()
    }

    #[test]
    fn component_selection() {
        assert_eq!(sample_component(&[1.0], 0.77), 0);
        assert_eq!(sample_component(&[0.3, 0.7], 0.3), 0);
        assert_eq!(sample_component(&[0.3, 0.7], 0.300001), 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let probs = [0.2, 0.5, 0.3];
        let n = 1_000_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_component(&probs, rng.random())] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn mvn_moments() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[0.5, 0.2, 0.2, 0.3]);
        let s = MvnSampler::new(mean.clone(), &cov).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| s.sample(&mut rng)).collect();
        let m = draws.iter().fold(DVector::zeros(2), |a, d| a + d) / n as f64;
        for i in 0..2 {
            assert!((m[i] - mean[i]).abs() < 3.0 * (cov[(i, i)] / n as f64).sqrt());
        }
        let c01 = draws.iter().map(|d| (d[0] - m[0]) * (d[1] - m[1])).sum::<f64>() / n as f64;
        // var of the product of centred normals is s00 s11 + s01^2
        let se = ((cov[(0, 0)] * cov[(1, 1)] + cov[(0, 1)].powi(2)) / n as f64).sqrt();
        assert!((c01 - cov[(0, 1)]).abs() < 3.0 * se);
        assert!(MvnSampler::new(mean, &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
    }

    #[test]
    fn joint_sampling_matches_analytic_covariance() {
        let model = model2();
        let (cov, _) = mixture_covariance(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 1_000_000;
        let xs = sample_joint(&model, n, &mut rng).unwrap();
        let mean: Vec<f64> = (0..2).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        for (j, k) in [(0, 0), (0, 1), (1, 1)] {
            let prods: Vec<f64> = xs.iter().map(|x| (x[j] - mean[j]) * (x[k] - mean[k])).collect();
            let c = prods.iter().sum::<f64>() / n as f64;
            let var = prods.iter().map(|p| (p - c).powi(2)).sum::<f64>() / n as f64;
            assert!((c - cov[(j, k)]).abs() < 3.0 * (var / n as f64).sqrt(), "({j},{k}) {c} vs {}", cov[(j, k)]);
        }
    }

    #[test]
    fn black_swans() {
        let panel = ReturnsPanel::new(vec![vec![1.0, 1.0], vec![1.1, 0.9]]).unwrap();
        assert_eq!(seed_black_swans(&panel, &[]).unwrap(), panel);
        let event = vec![0.4, 1.3];
        let seeded = seed_black_swans(&panel, &[event.clone()]).unwrap();
        assert_eq!(seeded.len(), 3);
        assert_eq!(seeded.rows()[2], event);
        let model = model2();
        let before = tabulate(&panel, model.marginals()).unwrap();
        let after = tabulate(&seeded, model.marginals()).unwrap();
        let cell = after.cell_ids[2];
        for c in 0..before.counts.len() {
            assert_eq!(after.counts[c], before.counts[c] + usize::from(c == cell));
        }
        assert!(seed_black_swans(&panel, &[vec![1.0]]).is_err());
    }

    #[test]
    fn portfolio_mixture_moments() {
        let model = model2();
        let w = [0.6, 0.4];
        let e = [0.01, 0.002];
        let mix = portfolio_return_mixture(&model, &w, &e).unwrap();
        let linear: f64 = model
            .marginals()
            .iter()
            .zip(w.iter().zip(e))
            .map(|(m, (a, x))| a * (1.0 - x) * mixture_moments(m).mean)
            .sum();
        assert_abs_diff_eq!(mixture_moments(&mix).mean, linear, epsilon = 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 400_000;
        let xs: Vec<f64> = sample_joint(&model, n, &mut rng)
            .unwrap()
            .iter()
            .map(|x| x.iter().zip(w.iter().zip(e)).map(|(v, (a, x))| a * (1.0 - x) * v).sum())
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64).sqrt();
        let moments = mixture_moments(&mix);
        assert!((m - moments.mean).abs() < 3.0 * sd / (n as f64).sqrt());
        // standard error of a sample std: sigma * sqrt((kurtosis - 1) / 4n)
        let se_sd = moments.std * ((moments.kurtosis - 1.0) / (4.0 * n as f64)).sqrt();
        assert!((sd - moments.std).abs() < 3.0 * se_sd);
    }

    #[test]
    fn ruin_factor_examples() {
        assert_eq!(ruin_factor_step(0.0, 1.05), RuinStep::Alive(0.0));
        match ruin_factor_step(0.04, 1.05) {
            RuinStep::Alive(v) => assert_abs_diff_eq!(v, 0.04 / 1.01, epsilon = 1e-15),
            RuinStep::Ruined => panic!(),
        }
        assert_eq!(ruin_factor_step(0.04, 0.03), RuinStep::Ruined);
        assert_eq!(ruin_factor_step(0.04, 0.04), RuinStep::Ruined);
    }

    /// Exhaustive enumeration over every return path of a two-point law.
    fn enumerate_success(values: [f64; 2], rate: f64, periods: usize) -> f64 {
        let mut success = 0.0;
        for mask in 0..(1u32 << periods) {
            let mut rf = rate;
            let mut alive = true;
            for t in 0..periods {
                match ruin_factor_step(rf, values[((mask >> t) & 1) as usize]) {
                    RuinStep::Alive(v) => rf = v,
                    RuinStep::Ruined => {
                        alive = false;
                        break;
                    }
                }
            }
            if alive {
                success += 0.5f64.powi(periods as i32);
            }
        }
        success
    }

    #[test]
    fn two_point_oracle() {
        let values = [1.06, 0.02];
        let exact = enumerate_success(values, 0.04, 3);
        let r = simulate_ruin_with(0.04, 3, 200_000, 7, |_, rng| values[usize::from(rng.random_bool(0.5))]).unwrap();
        assert!((r.success_prob - exact).abs() < 3.0 * r.success_se.max(1e-12));
        let total: f64 = r.longevity_pmf.iter().sum::<f64>() + r.longevity_tail;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert_eq!(r.ruin_by_period, r.longevity_pmf);
    }

    #[test]
    fn degenerate_returns_follow_the_recursion() {
        for &(r_hat, rate) in &[(1.01, 0.04), (1.0, 0.3), (0.9, 0.05), (1.2, 0.0)] {
            let r = simulate_ruin_with(rate, 30, 50, 1, |_, _| r_hat).unwrap();
            let mut rf = rate;
            let mut survive = true;
            for _ in 0..30 {
                match ruin_factor_step(rf, r_hat) {
                    RuinStep::Alive(v) => rf = v,
                    RuinStep::Ruined => {
                        survive = false;
                        break;
                    }
                }
            }
            assert_eq!(r.success_prob, if survive { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn zero_withdrawal_never_ruins() {
        let model = model2();
        let spec = PortfolioSpec::constant(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let plan = DecumulationPlan::new(0.0, Horizon::Fixed(30), spec).unwrap();
        let r = simulate_ruin(&plan, &model, 20_000, 3).unwrap();
        assert_eq!(r.success_prob, 1.0);
    }

    #[test]
    fn longevity_statistics() {
        let s = longevity_stats(&[1, 1, 2]);
        assert_eq!(s.median, 1.5);
        assert_eq!(s.modes, vec![2]);
        assert_abs_diff_eq!(s.mean, 5.0 / 4.0, epsilon = 1e-15);
        let s = longevity_stats(&[3, 1, 3]);
        assert_eq!(s.median, 1.0);
        assert_eq!(s.modes, vec![0, 2]);
    }

    #[test]
    fn random_horizon_examples() {
        let by_t: BTreeMap<usize, f64> = [(1, 0.9), (2, 0.7)].into_iter().collect();
        assert_abs_diff_eq!(random_horizon_ruin(&by_t, &[0.0, 0.0, 1.0]).unwrap(), 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(random_horizon_ruin(&by_t, &[0.5, 0.0, 0.5]).unwrap(), 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(random_horizon_ruin(&by_t, &[0.0, 0.5, 0.5]).unwrap(), 0.2, epsilon = 1e-15);
        assert_eq!(random_horizon_ruin(&by_t, &[0.0, 0.0, 0.0, 1.0]), Err(Error::MissingHorizon(3)));
    }

    #[test]
    fn random_horizon_matches_direct_simulation() {
        let model = model2();
        let pmf = vec![0.1, 0.0, 0.2, 0.3, 0.4];
        let spec = PortfolioSpec::constant(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let plan = DecumulationPlan::new(0.3, Horizon::Random(pmf.clone()), spec.clone()).unwrap();
        let n = 100_000;
        let combined = simulate_ruin(&plan, &model, n, 5).unwrap();
        let mix = portfolio_return_mixture(&model, &[0.5, 0.5], &[0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut ok = 0;
        for _ in 0..n {
            let t = sample_component(&pmf, rng.random());
            let mut rf = 0.3;
            let mut alive = true;
            for _ in 0..t {
                match ruin_factor_step(rf, sample_mixture(&mix, &mut rng)) {
                    RuinStep::Alive(v) => rf = v,
                    RuinStep::Ruined => {
                        alive = false;
                        break;
                    }
                }
            }
            ok += usize::from(alive);
        }
        let direct = ok as f64 / n as f64;
        let se = (direct * (1.0 - direct) / n as f64).sqrt() + combined.success_se;
        assert!((combined.success_prob - direct).abs() < 3.0 * se, "{} vs {}", combined.success_prob, direct);
    }

    #[test]
    fn interchangeable_assets_split_evenly() {
        let m = UnivariateMixture::normal(1.05, 0.15).unwrap();
        let grid = CellGrid::new(&[1, 1]).unwrap();
        let model = JointMixture::from_correlations(grid, vec![m.clone(), m], &[(0, 1.0)], &[vec![0.3]]).unwrap();
        let spec = PortfolioSpec::constant(vec![0.5, 0.5], vec![0.0, 0.0]).unwrap();
        let plan = DecumulationPlan::new(0.05, Horizon::Fixed(20), spec).unwrap();
        let mv = optimize_static_allocation(&plan, &model, AllocationObjective::MinVariance, &AllocationSearch::default(), 1).unwrap();
        assert_abs_diff_eq!(mv.weights[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(mv.weights[1], 0.5, epsilon = 1e-12);
        let search = AllocationSearch {
            grid_divisions: 10,
            paths: 2000,
        };
        let ms = optimize_static_allocation(&plan, &model, AllocationObjective::MaxSuccess, &search, 1).unwrap();
        assert!((0.0..=1.0).contains(&ms.value));
    }

    #[test]
    fn single_asset_allocation() {
        let m = UnivariateMixture::normal(1.05, 0.15).unwrap();
        let model = JointMixture::new(CellGrid::new(&[1]).unwrap(), vec![m], &[(0, 1.0)], &[vec![]]).unwrap();
        let spec = PortfolioSpec::constant(vec![1.0], vec![0.0]).unwrap();
        let plan = DecumulationPlan::new(0.05, Horizon::Fixed(10), spec).unwrap();
        let r = optimize_static_allocation(&plan, &model, AllocationObjective::MinVariance, &AllocationSearch::default(), 1).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_abs_diff_eq!(r.value, 0.15, epsilon = 1e-12);
    }

    #[test]
    fn qp_matches_grid_search() {
        let model = model2();
        let (cov, _) = mixture_covariance(&model);
        let (w, v) = simplex_qp(&cov).unwrap();
        for cand in simplex_grid(2, 1000) {
            let c = DVector::from_column_slice(&cand);
            assert!(c.dot(&(&cov * &c)) >= v - 1e-15);
        }
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }
}
