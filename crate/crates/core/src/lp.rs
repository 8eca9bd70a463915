//! Dense two-phase primal simplex with bounded variables.
//!
//! Every row `a·x {<=,=,>=} b` gets a logical (slack) column whose bounds
//! encode the relation, so the working system is always `A x + s = b`.
//! Rows whose initial residual cannot be absorbed by the slack receive an
//! artificial column that phase one drives to zero. Pricing is Dantzig's
//! largest-coefficient rule with lowest-index tie breaking; after a run of
//! degenerate pivots the kernel falls back to Bland's rule until it makes
//! progress again, which rules out cycling while keeping runs reproducible.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    /// Sparse coefficients `(variable, value)`; repeated indices are summed.
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl LinearProgram {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            objective: Vec::new(),
            constraints: Vec::new(),
            lower: Vec::new(),
            upper: Vec::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Adds a variable and returns its index.
    pub fn add_var(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        coeffs: Vec<(usize, f64)>,
        relation: Relation,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint {
            coeffs,
            relation,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let n = self.objective.len();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(LpError::DimensionMismatch(format!(
                "{} objective coefficients but {} lower / {} upper bounds",
                n,
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (j, (&lo, &hi)) in self.lower.iter().zip(&self.upper).enumerate() {
            if lo.is_nan()
                || hi.is_nan()
                || lo > hi
                || lo == f64::INFINITY
                || hi == f64::NEG_INFINITY
            {
                return Err(LpError::InvalidBounds {
                    var: j,
                    lower: lo,
                    upper: hi,
                });
            }
            if !self.objective[j].is_finite() {
                return Err(LpError::NonFinite(format!(
                    "objective coefficient of variable {j}"
                )));
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(LpError::NonFinite(format!("right-hand side of row {i}")));
            }
            for &(j, a) in &row.coeffs {
                if j >= n {
                    return Err(LpError::DimensionMismatch(format!(
                        "row {i} references variable {j} but the program has {n} variables"
                    )));
                }
                if !a.is_finite() {
                    return Err(LpError::NonFinite(format!("coefficient ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of rows and bounds at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.constraints {
            let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match row.relation {
                Relation::Le => lhs - row.rhs,
                Relation::Ge => row.rhs - lhs,
                Relation::Eq => (lhs - row.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (j, &xj) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - xj).max(xj - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// `None` picks a limit proportional to the problem size.
    pub max_iterations: Option<usize>,
    pub degenerate_streak: usize,
}

impl Default for LpConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            pivot_tol: 1e-7,
            max_iterations: None,
            degenerate_streak: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub status: LpStatus,
    /// Objective in the program's own sense. Meaningful only when optimal.
    pub objective: f64,
    pub primal: Vec<f64>,
    /// Shadow price per row: rate of change of the optimal objective with
    /// respect to that row's right-hand side.
    pub dual: Vec<f64>,
    /// `c_j - dual^T A_j` per structural variable.
    pub reduced_costs: Vec<f64>,
    /// Basic column per row (structural `j < n`, logical `n + i`).
    pub basis: Vec<usize>,
    pub iterations: usize,
}

impl LpSolution {
    fn without_point(status: LpStatus, iterations: usize) -> Self {
        Self {
            status,
            objective: f64::NAN,
            primal: Vec::new(),
            dual: Vec::new(),
            reduced_costs: Vec::new(),
            basis: Vec::new(),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid bounds on variable {var}: [{lower}, {upper}]")]
    InvalidBounds { var: usize, lower: f64, upper: f64 },
    #[error("non-finite data: {0}")]
    NonFinite(String),
    #[error("numerical breakdown: residual {residual:.3e} after refactorization ({detail})")]
    Numerical { residual: f64, detail: String },
    #[error("simplex iteration limit {0} reached")]
    IterationLimit(usize),
}

pub fn solve_lp(lp: &LinearProgram) -> Result<LpSolution, LpError> {
    solve_lp_with(lp, &LpConfig::default())
}

pub fn solve_lp_with(lp: &LinearProgram, config: &LpConfig) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let mut tableau = Tableau::new(lp, config);
    let limit = config
        .max_iterations
        .unwrap_or(10_000 + 50 * (tableau.m + tableau.ncols));

    if tableau.n_art > 0 {
        tableau.set_phase_one_costs();
        match tableau.run(limit)? {
            Outcome::Optimal => {}
            Outcome::Unbounded => {
                return Err(LpError::Numerical {
                    residual: f64::INFINITY,
                    detail: "phase one reported an unbounded direction".into(),
                })
            }
        }
        let infeasibility: f64 = (tableau.first_art..tableau.ncols)
            .map(|j| tableau.x[j])
            .sum();
        let scale = 1.0 + tableau.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if infeasibility > config.feasibility_tol * scale {
            return Ok(LpSolution::without_point(
                LpStatus::Infeasible,
                tableau.iterations,
            ));
        }
        tableau.retire_artificials();
    }

    tableau.set_phase_two_costs();
    let mut refactors = 0;
    loop {
        match tableau.run(limit)? {
            Outcome::Unbounded => {
                return Ok(LpSolution::without_point(
                    LpStatus::Unbounded,
                    tableau.iterations,
                ))
            }
            Outcome::Optimal => {}
        }
        let primal: Vec<f64> = tableau.x[..tableau.n].to_vec();
        let residual = lp.max_violation(&primal);
        let scale = 1.0 + tableau.rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if residual <= config.feasibility_tol * scale {
            break;
        }
        if refactors == 2 {
            return Err(LpError::Numerical {
                residual,
                detail: format!(
                    "{} rows, {} columns, basis condition degraded",
                    tableau.m, tableau.ncols
                ),
            });
        }
        refactors += 1;
        tableau.refactor()?;
    }
    Ok(tableau.into_solution(lp))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Optimal,
    Unbounded,
}

const NOT_BASIC: usize = usize::MAX;
/// Tableau entries below this magnitude after an update are rounding noise.
const DROP_TOL: f64 = 1e-12;

struct Tableau<'a> {
    config: &'a LpConfig,
    m: usize,
    n: usize,
    ncols: usize,
    first_art: usize,
    n_art: usize,
    /// Original `[A | I | art]` rows, kept for refactorization.
    orig: Vec<f64>,
    /// Current `B^-1 [A | I | art]`, row major.
    tab: Vec<f64>,
    rhs: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    x: Vec<f64>,
    cost: Vec<f64>,
    /// Phase-two (minimization) costs of structural columns.
    min_cost: Vec<f64>,
    d: Vec<f64>,
    basis: Vec<usize>,
    row_of: Vec<usize>,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn new(lp: &LinearProgram, config: &'a LpConfig) -> Self {
        let m = lp.constraints.len();
        let n = lp.objective.len();

        let mut x = vec![0.0; n + m];
        let mut lb = Vec::with_capacity(n + m);
        let mut ub = Vec::with_capacity(n + m);
        for j in 0..n {
            lb.push(lp.lower[j]);
            ub.push(lp.upper[j]);
            x[j] = nonbasic_start(lp.lower[j], lp.upper[j]);
        }
        for row in &lp.constraints {
            let (lo, hi) = match row.relation {
                Relation::Le => (0.0, f64::INFINITY),
                Relation::Ge => (f64::NEG_INFINITY, 0.0),
                Relation::Eq => (0.0, 0.0),
            };
            lb.push(lo);
            ub.push(hi);
        }

        // Dense structural rows.
        let mut dense = vec![0.0; m * n];
        for (i, row) in lp.constraints.iter().enumerate() {
            for &(j, a) in &row.coeffs {
                dense[i * n + j] += a;
            }
        }

        // Decide which rows need an artificial column.
        let mut art_sign = vec![0.0; m];
        let mut residuals = vec![0.0; m];
        for i in 0..m {
            let r = lp.constraints[i].rhs - (0..n).map(|j| dense[i * n + j] * x[j]).sum::<f64>();
            residuals[i] = r;
            let s = n + i;
            if r >= lb[s] && r <= ub[s] {
                x[s] = r;
            } else {
                let at = if r < lb[s] { lb[s] } else { ub[s] };
                x[s] = at;
                art_sign[i] = if r - at >= 0.0 { 1.0 } else { -1.0 };
            }
        }
        let n_art = art_sign.iter().filter(|s| **s != 0.0).count();
        let first_art = n + m;
        let ncols = n + m + n_art;

        let mut orig = vec![0.0; m * ncols];
        let mut basis = vec![0; m];
        let mut next_art = first_art;
        for i in 0..m {
            let row = &mut orig[i * ncols..(i + 1) * ncols];
            row[..n].copy_from_slice(&dense[i * n..(i + 1) * n]);
            row[n + i] = 1.0;
            if art_sign[i] != 0.0 {
                row[next_art] = art_sign[i];
                basis[i] = next_art;
                next_art += 1;
            } else {
                basis[i] = n + i;
            }
        }
        for _ in 0..n_art {
            lb.push(0.0);
            ub.push(f64::INFINITY);
            x.push(0.0);
        }
        // Basis columns are +-e_i, so B^-1 A is a row sign flip.
        let mut tab = orig.clone();
        for i in 0..m {
            let b = basis[i];
            let sign = orig[i * ncols + b];
            if sign != 1.0 {
                for v in &mut tab[i * ncols..(i + 1) * ncols] {
                    *v /= sign;
                }
            }
            if b >= first_art {
                x[b] = (residuals[i] - x[n + i]) / sign;
            }
        }
        let mut row_of = vec![NOT_BASIC; ncols];
        for (i, &b) in basis.iter().enumerate() {
            row_of[b] = i;
        }

        let flip = if lp.sense == Sense::Maximize {
            -1.0
        } else {
            1.0
        };
        let min_cost = lp.objective.iter().map(|c| flip * c).collect();

        Self {
            config,
            m,
            n,
            ncols,
            first_art,
            n_art,
            orig,
            tab,
            rhs: lp.constraints.iter().map(|r| r.rhs).collect(),
            lb,
            ub,
            x,
            cost: vec![0.0; ncols],
            min_cost,
            d: vec![0.0; ncols],
            basis,
            row_of,
            iterations: 0,
        }
    }

    fn set_phase_one_costs(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for j in self.first_art..self.ncols {
            self.cost[j] = 1.0;
        }
        self.price();
    }

    fn set_phase_two_costs(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..self.n].copy_from_slice(&self.min_cost);
        self.price();
    }

    /// Artificial columns may no longer move off zero.
    fn retire_artificials(&mut self) {
        for j in self.first_art..self.ncols {
            self.ub[j] = 0.0;
            if self.row_of[j] == NOT_BASIC || self.x[j].abs() < self.config.feasibility_tol {
                self.x[j] = 0.0;
            }
        }
    }

    fn price(&mut self) {
        let nc = self.ncols;
        self.d.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * nc..(i + 1) * nc];
                for (dj, t) in self.d.iter_mut().zip(row) {
                    *dj -= cb * t;
                }
            }
        }
        for &b in &self.basis {
            self.d[b] = 0.0;
        }
    }

    /// Entering column and direction (+1 increase, -1 decrease).
    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let tol = self.config.optimality_tol;
        let mut best: Option<(usize, f64)> = None;
        let mut best_score = 0.0;
        for j in 0..self.ncols {
            if self.row_of[j] != NOT_BASIC {
                continue;
            }
            let (lo, hi) = (self.lb[j], self.ub[j]);
            if lo == hi {
                continue;
            }
            let dj = self.d[j];
            let dir = if dj < -tol && self.x[j] < hi {
                1.0
            } else if dj > tol && self.x[j] > lo {
                -1.0
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if dj.abs() > best_score {
                best_score = dj.abs();
                best = Some((j, dir));
            }
        }
        best
    }

    fn run(&mut self, limit: usize) -> Result<Outcome, LpError> {
        let mut degenerate = 0usize;
        let mut since_refactor = 0usize;
        let nc = self.ncols;
        loop {
            if self.iterations >= limit {
                return Err(LpError::IterationLimit(limit));
            }
            let bland = degenerate >= self.config.degenerate_streak;
            let Some((q, dir)) = self.choose_entering(bland) else {
                return Ok(Outcome::Optimal);
            };
            self.iterations += 1;

            // Two-pass ratio test: bounds relaxed by a small tolerance give
            // a step cap, then the largest pivot within that cap leaves.
            let harris = self.config.feasibility_tol * 0.1;
            let limits: Vec<(usize, f64, f64, bool)> = (0..self.m)
                .filter_map(|i| {
                    let t = self.tab[i * nc + q];
                    if t.abs() <= self.config.pivot_tol {
                        return None;
                    }
                    let b = self.basis[i];
                    let rate = -dir * t;
                    if rate < 0.0 {
                        (self.lb[b] > f64::NEG_INFINITY)
                            .then(|| (i, t, (self.x[b] - self.lb[b]) / -rate, false))
                    } else {
                        (self.ub[b] < f64::INFINITY)
                            .then(|| (i, t, (self.ub[b] - self.x[b]) / rate, true))
                    }
                })
                .collect();
            let cap = limits
                .iter()
                .map(|&(_, t, lim, _)| lim + harris / t.abs())
                .fold(f64::INFINITY, f64::min);
            let mut theta = f64::INFINITY;
            let mut leave: Option<usize> = None;
            let mut leave_to_upper = false;
            let mut leave_pivot = 0.0;
            for &(i, t, lim, to_upper) in &limits {
                if lim > cap {
                    continue;
                }
                let better = match leave {
                    None => true,
                    Some(r) if bland => self.basis[i] < self.basis[r],
                    Some(_) => t.abs() > leave_pivot,
                };
                if better {
                    theta = lim.max(0.0);
                    leave = Some(i);
                    leave_to_upper = to_upper;
                    leave_pivot = t.abs();
                }
            }
            let span = self.ub[q] - self.lb[q];
            if span.is_finite() && span <= theta {
                // Bound flip, basis unchanged.
                self.step(q, dir, span);
                self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                degenerate = 0;
                continue;
            }
            let Some(r) = leave else {
                return Ok(Outcome::Unbounded);
            };
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            self.step(q, dir, theta);
            let out = self.basis[r];
            self.x[out] = if leave_to_upper {
                self.ub[out]
            } else {
                self.lb[out]
            };
            self.pivot(r, q);
            since_refactor += 1;
            if since_refactor >= self.m.max(100) {
                self.refactor()?;
                since_refactor = 0;
            }
        }
    }

    fn step(&mut self, q: usize, dir: f64, theta: f64) {
        if theta == 0.0 {
            return;
        }
        let nc = self.ncols;
        self.x[q] += dir * theta;
        for i in 0..self.m {
            let t = self.tab[i * nc + q];
            if t != 0.0 {
                let b = self.basis[i];
                self.x[b] -= dir * theta * t;
            }
        }
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let nc = self.ncols;
        let p = self.tab[r * nc + q];
        let pivot_row: Vec<f64> = self.tab[r * nc..(r + 1) * nc]
            .iter()
            .map(|v| v / p)
            .collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * nc + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.tab[i * nc..(i + 1) * nc];
            for (v, pr) in row.iter_mut().zip(&pivot_row) {
                if *pr != 0.0 {
                    *v -= f * pr;
                    if v.abs() < DROP_TOL {
                        *v = 0.0;
                    }
                }
            }
            row[q] = 0.0;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for (dj, pr) in self.d.iter_mut().zip(&pivot_row) {
                *dj -= dq * pr;
            }
        }
        self.d[q] = 0.0;
        self.tab[r * nc..(r + 1) * nc].copy_from_slice(&pivot_row);
        self.tab[r * nc + q] = 1.0;
        let out = self.basis[r];
        self.row_of[out] = NOT_BASIC;
        self.row_of[q] = r;
        self.basis[r] = q;
    }

    /// Rebuilds `B^-1 [A | I | art]`, basic values and reduced costs from
    /// the original data for the current basis.
    fn refactor(&mut self) -> Result<(), LpError> {
        let (m, nc) = (self.m, self.ncols);
        if m == 0 {
            return Ok(());
        }
        let b = DMatrix::from_fn(m, m, |i, k| self.orig[i * nc + self.basis[k]]);
        let lu = b.lu();
        let mut rhs = DVector::from_fn(m, |i, _| self.rhs[i]);
        for j in 0..nc {
            if self.row_of[j] == NOT_BASIC && self.x[j] != 0.0 {
                for i in 0..m {
                    rhs[i] -= self.orig[i * nc + j] * self.x[j];
                }
            }
        }
        let xb = lu.solve(&rhs).ok_or_else(|| LpError::Numerical {
            residual: f64::INFINITY,
            detail: "singular basis during refactorization".into(),
        })?;
        let full = DMatrix::from_fn(m, nc, |i, j| self.orig[i * nc + j]);
        let t = lu.solve(&full).ok_or_else(|| LpError::Numerical {
            residual: f64::INFINITY,
            detail: "singular basis during refactorization".into(),
        })?;
        for i in 0..m {
            for j in 0..nc {
                self.tab[i * nc + j] = t[(i, j)];
            }
            self.x[self.basis[i]] = xb[i];
        }
        self.price();
        Ok(())
    }

    fn into_solution(self, lp: &LinearProgram) -> LpSolution {
        let flip = if lp.sense == Sense::Maximize {
            -1.0
        } else {
            1.0
        };
        let primal: Vec<f64> = self.x[..self.n].to_vec();
        let dual = (0..self.m).map(|i| -flip * self.d[self.n + i]).collect();
        let reduced_costs = (0..self.n).map(|j| flip * self.d[j]).collect();
        LpSolution {
            status: LpStatus::Optimal,
            objective: lp.objective_value(&primal),
            primal,
            dual,
            reduced_costs,
            basis: self.basis,
            iterations: self.iterations,
        }
    }
}

fn nonbasic_start(lower: f64, upper: f64) -> f64 {
    if lower.is_finite() {
        lower
    } else if upper.is_finite() {
        upper
    } else {
        0.0
    }
}
