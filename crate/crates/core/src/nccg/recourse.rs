//! Minimum-slack recourse: how far the best corrective dispatch falls short
//! of feasibility at a fixed wind realization.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::formulation::{apply_uncertainty, DneBox, StackedSystem};
use crate::lp::{LinearProgram, Relation, Sense};
use crate::milp::{solve_milp, MilpConfig, MixedIntegerProgram};

use super::NccgError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recourse {
    /// Sum of row slacks; zero exactly when the realization is feasible.
    pub total_slack: f64,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    /// Per-row violation, in stacked row order.
    pub slack: Vec<f64>,
}

impl Recourse {
    /// Rows whose slack exceeds `tol`, as (row index, slack).
    pub fn violated_rows(&self, tol: f64) -> Vec<(usize, f64)> {
        self.slack
            .iter()
            .copied()
            .enumerate()
            .filter(|&(_, s)| s > tol)
            .collect()
    }
}

/// `Q` at the normalized point `v` of the box.
pub fn evaluate_recourse(
    sys: &StackedSystem,
    dne: &DneBox,
    v: &[f64],
    config: &MilpConfig,
) -> Result<Recourse, NccgError> {
    let rhs = apply_uncertainty(sys, dne, v)?;
    solve_slack_program(sys, &rhs, None, None, config)
}

/// `Q` at the wind realization `w` given in MW.
pub fn recourse_at(
    sys: &StackedSystem,
    w: &[f64],
    config: &MilpConfig,
) -> Result<Recourse, NccgError> {
    check_len(sys, w)?;
    solve_slack_program(sys, &sys.rhs_at(w), None, None, config)
}

/// Minimizes a weighted slack sum while keeping the plain slack sum within
/// `total_cap`. Used to pick which rows carry an unavoidable violation.
pub fn weighted_recourse_at(
    sys: &StackedSystem,
    w: &[f64],
    weights: &[f64],
    total_cap: f64,
    config: &MilpConfig,
) -> Result<Recourse, NccgError> {
    check_len(sys, w)?;
    if weights.len() != sys.n_rows() {
        return Err(NccgError::InvalidConfig(format!(
            "{} slack weights for {} rows",
            weights.len(),
            sys.n_rows()
        )));
    }
    solve_slack_program(sys, &sys.rhs_at(w), Some(weights), Some(total_cap), config)
}

fn check_len(sys: &StackedSystem, w: &[f64]) -> Result<(), NccgError> {
    if w.len() != sys.n_w() {
        return Err(NccgError::InvalidConfig(format!(
            "wind realization has {} components, system has {}",
            w.len(),
            sys.n_w()
        )));
    }
    Ok(())
}

fn solve_slack_program(
    sys: &StackedSystem,
    rhs: &DVector<f64>,
    weights: Option<&[f64]>,
    total_cap: Option<f64>,
    config: &MilpConfig,
) -> Result<Recourse, NccgError> {
    let (nx, nz, m) = (sys.n_x(), sys.n_z(), sys.n_rows());
    let mut lp = LinearProgram::new(Sense::Minimize);
    for _ in 0..nx {
        lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
    }
    let integers: Vec<usize> = (0..nz).map(|_| lp.add_var(0.0, 0.0, 1.0)).collect();
    let s0 = lp.num_vars();
    for i in 0..m {
        lp.add_var(weights.map_or(1.0, |w| w[i]), 0.0, f64::INFINITY);
    }
    for i in 0..m {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        coeffs.extend((0..nx).filter_map(|c| nonzero(sys.dispatch[(i, c)]).map(|a| (c, a))));
        coeffs.extend((0..nz).filter_map(|c| nonzero(sys.commitment[(i, c)]).map(|a| (nx + c, a))));
        coeffs.push((s0 + i, -1.0));
        lp.add_constraint(coeffs, Relation::Le, rhs[i]);
    }
    if let Some(cap) = total_cap {
        lp.add_constraint((0..m).map(|i| (s0 + i, 1.0)).collect(), Relation::Le, cap);
    }

    let sol = solve_milp(&MixedIntegerProgram::new(lp, integers), config)?;
    // Without a cap the slacks make every point feasible.
    if !sol.is_optimal() {
        return Err(NccgError::SlackCap(total_cap.unwrap_or(f64::INFINITY)));
    }
    let slack: Vec<f64> = sol.primal[s0..].iter().map(|s| s.max(0.0)).collect();
    Ok(Recourse {
        total_slack: slack.iter().sum(),
        x: sol.primal[..nx].to_vec(),
        z: sol.primal[nx..nx + nz].to_vec(),
        slack,
    })
}

fn nonzero(a: f64) -> Option<f64> {
    (a != 0.0).then_some(a)
}
