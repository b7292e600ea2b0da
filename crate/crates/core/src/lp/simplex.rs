//! Dense two-phase simplex with Bland's anti-cycling rule.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Goal {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<f64>,
    pub sense: Sense,
    pub rhs: f64,
}

impl Constraint {
    pub fn new(coeffs: Vec<f64>, sense: Sense, rhs: f64) -> Self {
        Self { coeffs, sense, rhs }
    }
}

/// Linear program over nonnegative variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub goal: Goal,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn minimize(objective: Vec<f64>) -> Self {
        Self {
            goal: Goal::Minimize,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn maximize(objective: Vec<f64>) -> Self {
        Self {
            goal: Goal::Maximize,
            objective,
            constraints: Vec::new(),
        }
    }

    pub fn subject_to(mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) -> Self {
        self.constraints.push(Constraint::new(coeffs, sense, rhs));
        self
    }

    pub fn push(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint::new(coeffs, sense, rhs));
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub pivots: usize,
}

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-9;
const REFACTOR_EVERY: usize = 50;

struct Tableau {
    rows: usize,
    cols: usize,
    // (rows + 1) x (cols + 1); last row is the reduced-cost row, last column the rhs
    data: Vec<f64>,
    basis: Vec<usize>,
    // constraint rows as first built, for refactorization
    original: Vec<f64>,
    costs: Vec<f64>,
    since_refactor: usize,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.cols + 1) + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.at(r, self.cols)
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let inv = 1.0 / self.data[pr * w + pc];
        for c in 0..w {
            self.data[pr * w + c] *= inv;
        }
        self.data[pr * w + pc] = 1.0;
        let pivot_row: Vec<f64> = self.data[pr * w..(pr + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let factor = self.data[r * w + pc];
            if factor != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * p;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Recomputes the constraint rows as `B^-1 [A | b]` from the original
    /// rows, discarding accumulated pivoting error.
    fn refactor(&mut self) {
        let w = self.cols + 1;
        let m = self.rows;
        let orig = DMatrix::from_row_slice(m, w, &self.original);
        let basis_mat = DMatrix::from_fn(m, m, |r, c| orig[(r, self.basis[c])]);
        let Some(fresh) = basis_mat.lu().solve(&orig) else {
            return;
        };
        for r in 0..m {
            for c in 0..w {
                self.data[r * w + c] = fresh[(r, c)];
            }
            self.data[r * w + self.basis[r]] = 1.0;
            if self.data[r * w + self.cols] < 0.0 && self.data[r * w + self.cols] > -FEAS_TOL {
                self.data[r * w + self.cols] = 0.0;
            }
        }
        let costs = std::mem::take(&mut self.costs);
        self.set_costs(&costs);
        self.since_refactor = 0;
    }

    /// Loads `costs` into the objective row, priced out against the basis.
    fn set_costs(&mut self, costs: &[f64]) {
        self.costs = costs.to_vec();
        let w = self.cols + 1;
        let obj = self.rows * w;
        for c in 0..w {
            self.data[obj + c] = if c < costs.len() { costs[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..w {
                    self.data[obj + c] -= cb * self.data[r * w + c];
                }
            }
        }
    }

    /// Minimizes the loaded objective over columns `allowed`.
    fn run(&mut self, allowed: &[bool], limit: usize, pivots: &mut usize) -> Result<()> {
        loop {
            let entering = (0..self.cols).find(|&c| allowed[c] && self.at(self.rows, c) < -COST_TOL);
            let Some(pc) = entering else {
                if self.since_refactor == 0 {
                    return Ok(());
                }
                // confirm optimality on a freshly factored tableau
                self.refactor();
                continue;
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.rhs(r) / a;
                    leave = match leave {
                        None => Some((r, ratio)),
                        Some((lr, lratio)) => {
                            if ratio < lratio - 1e-12 || ((ratio - lratio).abs() <= 1e-12 && self.basis[r] < self.basis[lr]) {
                                Some((r, ratio))
                            } else {
                                Some((lr, lratio))
                            }
                        }
                    };
                }
            }
            let Some((pr, _)) = leave else {
                return Err(Error::Unbounded);
            };
            self.pivot(pr, pc);
            *pivots += 1;
            self.since_refactor += 1;
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor();
            }
            if *pivots > limit {
                return Err(Error::IterationLimit(limit));
            }
        }
    }
}

/// Solves `lp` to a global optimum, or reports infeasibility/unboundedness.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution> {
    let n = lp.n_vars();
    for c in &lp.constraints {
        if c.coeffs.len() != n {
            return Err(Error::Domain("constraint width differs from objective".into()));
        }
    }
    // normalize to nonnegative right-hand sides
    let rows: Vec<(Vec<f64>, Sense, f64)> = lp
        .constraints
        .iter()
        .map(|c| {
            if c.rhs < 0.0 {
                let flipped = match c.sense {
                    Sense::Le => Sense::Ge,
                    Sense::Ge => Sense::Le,
                    Sense::Eq => Sense::Eq,
                };
                (c.coeffs.iter().map(|v| -v).collect(), flipped, -c.rhs)
            } else {
                (c.coeffs.clone(), c.sense, c.rhs)
            }
        })
        .collect();
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        data: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
        original: Vec::new(),
        costs: Vec::new(),
        since_refactor: 0,
    };
    let (mut s, mut a) = (n, n + n_slack);
    for (r, (coeffs, sense, rhs)) in rows.iter().enumerate() {
        t.data[r * w..r * w + n].copy_from_slice(coeffs);
        t.data[r * w + cols] = *rhs;
        match sense {
            Sense::Le => {
                t.data[r * w + s] = 1.0;
                t.basis[r] = s;
                s += 1;
            }
            Sense::Ge => {
                t.data[r * w + s] = -1.0;
                s += 1;
                t.data[r * w + a] = 1.0;
                t.basis[r] = a;
                a += 1;
            }
            Sense::Eq => {
                t.data[r * w + a] = 1.0;
                t.basis[r] = a;
                a += 1;
            }
        }
    }
    t.original = t.data[..m * w].to_vec();
    let limit = 200 * (m + cols).max(50);
    let mut pivots = 0;
    let art_start = n + n_slack;

    if n_art > 0 {
        let mut phase1 = vec![0.0; cols];
        for c in phase1.iter_mut().skip(art_start) {
            *c = 1.0;
        }
        t.set_costs(&phase1);
        t.run(&vec![true; cols], limit, &mut pivots)?;
        let infeasibility: f64 = (0..m).filter(|&r| t.basis[r] >= art_start).map(|r| t.rhs(r)).sum();
        if infeasibility > FEAS_TOL {
            return Err(Error::Infeasible);
        }
        // drive remaining artificials out of the basis
        let mut r = 0;
        while r < t.rows {
            if t.basis[r] >= art_start {
                if let Some(pc) = (0..art_start).find(|&c| t.at(r, c).abs() > 1e-9) {
                    t.pivot(r, pc);
                } else {
                    remove_row(&mut t, r);
                    continue;
                }
            }
            r += 1;
        }
    }

    let sign = if lp.goal == Goal::Maximize { -1.0 } else { 1.0 };
    let costs: Vec<f64> = lp.objective.iter().map(|c| sign * c).collect();
    t.set_costs(&costs);
    let allowed: Vec<bool> = (0..cols).map(|c| c < art_start).collect();
    t.run(&allowed, limit, &mut pivots)?;

    let mut x = vec![0.0; n];
    for r in 0..t.rows {
        if t.basis[r] < n {
            x[t.basis[r]] = t.rhs(r).max(0.0);
        }
    }
    let objective = lp.objective.iter().zip(&x).map(|(c, v)| c * v).sum();
    Ok(LpSolution { x, objective, pivots })
}

fn remove_row(t: &mut Tableau, r: usize) {
    let w = t.cols + 1;
    t.data.drain(r * w..(r + 1) * w);
    t.original.drain(r * w..(r + 1) * w);
    t.basis.remove(r);
    t.rows -= 1;
}
