//! Worst-case vertex search for a fixed box.
//!
//! `Q(l, u) = max_v min_z min_x 1's` has a discrete inner minimization, so
//! it is solved by its own column-and-constraint loop over commitment
//! candidates. For a fixed candidate `z^m` the slack LP is replaced by its
//! dual: `max lambda' [K (l + (u - l) v) + J z^m - h]` over `0 <= lambda <= 1`
//! with `lambda' H = 0`. The bilinear terms `lambda_i v_j` are exact under
//! McCormick envelopes because `v` is binary.
//!
//! For few wind columns the inner master is solved by scanning every
//! vertex instead: with `v` fixed it separates into one dual LP per
//! candidate, and each candidate's values are computed once per box.

use log::debug;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::formulation::{DneBox, StackedSystem};
use crate::lp::{solve_lp, LinearProgram, LpStatus, Relation, Sense};
use crate::milp::{solve_milp, MilpConfig, MixedIntegerProgram};

use super::recourse::{evaluate_recourse, Recourse};
use super::NccgError;

#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemSolution {
    /// Worst vertex found, 1 meaning the upper bound.
    pub vertex: Vec<u8>,
    /// `Q` at that vertex.
    pub value: f64,
    pub recourse: Recourse,
    /// Upper bound from the last inner master.
    pub bound: f64,
    pub candidates: Vec<Vec<f64>>,
    /// Dual vector per candidate from the last inner master.
    pub duals: Vec<Vec<f64>>,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubproblemConfig {
    pub eps_inner: f64,
    pub max_inner: usize,
    /// Largest number of wind columns for which the inner master is solved
    /// by scanning vertices rather than by branch and bound.
    pub scan_limit: usize,
}

struct InnerMaster {
    vertex: Vec<u8>,
    bound: f64,
    duals: Vec<Vec<f64>>,
}

pub fn solve_subproblem(
    sys: &StackedSystem,
    dne: &DneBox,
    config: &SubproblemConfig,
    milp: &MilpConfig,
) -> Result<SubproblemSolution, NccgError> {
    let n = sys.n_w();
    let zero = vec![0.0; n];
    let first = evaluate_recourse(sys, dne, &zero, milp)?;
    let mut best = (vec![0u8; n], first.clone());
    let mut candidates = vec![first.z];
    let mut scan = (n <= config.scan_limit).then(|| VertexScan::new(n));

    for iteration in 1..=config.max_inner {
        let master = match scan.as_mut() {
            Some(scan) => scan.solve(sys, dne, &candidates)?,
            None => solve_inner_master(sys, dne, &candidates, milp)?,
        };
        let v: Vec<f64> = master.vertex.iter().map(|&b| f64::from(b)).collect();
        let rec = evaluate_recourse(sys, dne, &v, milp)?;
        if rec.total_slack > best.1.total_slack {
            best = (master.vertex.clone(), rec.clone());
        }
        let gap = master.bound - best.1.total_slack;
        let repeated = candidates.iter().any(|z| same_commitment(z, &rec.z));
        if gap <= config.eps_inner || repeated {
            if gap > config.eps_inner {
                debug!("inner loop stopped on a repeated commitment with gap {gap:.3e}");
            }
            return Ok(SubproblemSolution {
                vertex: best.0,
                value: best.1.total_slack,
                recourse: best.1,
                bound: master.bound,
                candidates,
                duals: master.duals,
                inner_iterations: iteration,
            });
        }
        candidates.push(rec.z);
    }
    Err(NccgError::InnerLimit {
        iterations: config.max_inner,
    })
}

fn same_commitment(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() < 0.5)
}

/// Exact inner master by enumeration: `max_v min_m phi_m(v)`, where
/// `phi_m(v)` is the dual LP value for candidate `m` at vertex `v`.
struct VertexScan {
    n: usize,
    /// `min` over the candidates scanned so far, per vertex mask.
    upper: Vec<f64>,
    scanned: usize,
}

impl VertexScan {
    fn new(n: usize) -> Self {
        Self {
            n,
            upper: vec![f64::INFINITY; 1 << n],
            scanned: 0,
        }
    }

    fn solve(
        &mut self,
        sys: &StackedSystem,
        dne: &DneBox,
        candidates: &[Vec<f64>],
    ) -> Result<InnerMaster, NccgError> {
        for z in &candidates[self.scanned..] {
            let values = (0..self.upper.len())
                .into_par_iter()
                .map(|mask| dual_value(sys, dne, z, &mask_vertex(mask, self.n)).map(|(phi, _)| phi))
                .collect::<Result<Vec<f64>, NccgError>>()?;
            for (u, phi) in self.upper.iter_mut().zip(values) {
                *u = u.min(phi);
            }
        }
        self.scanned = candidates.len();
        // First mask attaining the maximum.
        let (best, bound) =
            self.upper
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (mask, &u)| {
                    if u > acc.1 {
                        (mask, u)
                    } else {
                        acc
                    }
                });
        let v = mask_vertex(best, self.n);
        let duals = candidates
            .iter()
            .map(|z| dual_value(sys, dne, z, &v).map(|(_, lambda)| lambda))
            .collect::<Result<Vec<_>, NccgError>>()?;
        Ok(InnerMaster {
            vertex: v.iter().map(|&b| b as u8).collect(),
            bound,
            duals,
        })
    }
}

fn mask_vertex(mask: usize, n: usize) -> Vec<f64> {
    (0..n).map(|j| ((mask >> j) & 1) as f64).collect()
}

/// `max lambda' r` over `0 <= lambda <= 1`, `lambda' H = 0`, where
/// `r = K w(v) + J z - h`. Rows without dispatch terms are settled
/// directly: their multiplier is 1 exactly when `r_i > 0`.
fn dual_value(
    sys: &StackedSystem,
    dne: &DneBox,
    z: &[f64],
    v: &[f64],
) -> Result<(f64, Vec<f64>), NccgError> {
    let (m, nx) = (sys.n_rows(), sys.n_x());
    let r = &sys.wind * DVector::from_vec(dne.realize(v))
        + &sys.commitment * DVector::from_column_slice(z)
        - &sys.rhs;
    let coupled: Vec<usize> = (0..m)
        .filter(|&i| (0..nx).any(|c| sys.dispatch[(i, c)] != 0.0))
        .collect();

    let mut lambda: Vec<f64> = (0..m).map(|i| if r[i] > 0.0 { 1.0 } else { 0.0 }).collect();
    let mut value: f64 = (0..m)
        .filter(|i| !coupled.contains(i))
        .map(|i| r[i].max(0.0))
        .sum();

    let mut lp = LinearProgram::new(Sense::Maximize);
    for &i in &coupled {
        lp.add_var(r[i], 0.0, 1.0);
    }
    for c in 0..nx {
        let coeffs: Vec<(usize, f64)> = coupled
            .iter()
            .enumerate()
            .filter_map(|(k, &i)| {
                let h = sys.dispatch[(i, c)];
                (h != 0.0).then_some((k, h))
            })
            .collect();
        if !coeffs.is_empty() {
            lp.add_constraint(coeffs, Relation::Eq, 0.0);
        }
    }
    let sol = solve_lp(&lp).map_err(crate::milp::MilpError::from)?;
    if sol.status != LpStatus::Optimal {
        return Err(NccgError::Solver("dual slack LP not optimal".into()));
    }
    for (k, &i) in coupled.iter().enumerate() {
        lambda[i] = sol.primal[k];
    }
    value += sol.objective;
    Ok((value, lambda))
}

fn solve_inner_master(
    sys: &StackedSystem,
    dne: &DneBox,
    candidates: &[Vec<f64>],
    milp: &MilpConfig,
) -> Result<InnerMaster, NccgError> {
    let (n, m, nx) = (sys.n_w(), sys.n_rows(), sys.n_x());
    let width = dne.width();
    let kl = &sys.wind * nalgebra::DVector::from_column_slice(&dne.lower);

    let mut lp = LinearProgram::new(Sense::Maximize);
    let v: Vec<usize> = (0..n)
        .map(|j| lp.add_var(0.0, 0.0, if width[j] > 0.0 { 1.0 } else { 0.0 }))
        .collect();
    let eta = lp.add_var(1.0, 0.0, f64::INFINITY);

    let pairs: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let a = sys.wind[(i, j)] * width[j];
            (a != 0.0).then_some((i, j, a))
        })
        .collect();

    let mut lambda_blocks = Vec::with_capacity(candidates.len());
    for z in candidates {
        let jz = &sys.commitment * nalgebra::DVector::from_column_slice(z);
        let l0 = lp.num_vars();
        for _ in 0..m {
            lp.add_var(0.0, 0.0, 1.0);
        }
        lambda_blocks.push(l0);

        // eta <= sum_i c_i lambda_i + sum_ij a_ij p_ij
        let mut cut = vec![(eta, 1.0)];
        for i in 0..m {
            let c = kl[i] + jz[i] - sys.rhs[i];
            if c != 0.0 {
                cut.push((l0 + i, -c));
            }
        }
        for &(i, j, a) in &pairs {
            let p = lp.add_var(0.0, 0.0, 1.0);
            cut.push((p, -a));
            lp.add_constraint(vec![(p, 1.0), (v[j], -1.0)], Relation::Le, 0.0);
            lp.add_constraint(vec![(p, 1.0), (l0 + i, -1.0)], Relation::Le, 0.0);
            lp.add_constraint(
                vec![(l0 + i, 1.0), (v[j], 1.0), (p, -1.0)],
                Relation::Le,
                1.0,
            );
        }
        lp.add_constraint(cut, Relation::Le, 0.0);

        for c in 0..nx {
            let coeffs: Vec<(usize, f64)> = (0..m)
                .filter(|&i| sys.dispatch[(i, c)] != 0.0)
                .map(|i| (l0 + i, sys.dispatch[(i, c)]))
                .collect();
            if !coeffs.is_empty() {
                lp.add_constraint(coeffs, Relation::Eq, 0.0);
            }
        }
    }

    let sol = solve_milp(&MixedIntegerProgram::new(lp, v.clone()), milp)?;
    if !sol.is_optimal() {
        // lambda = 0 is always feasible.
        return Err(NccgError::Solver("inner master reported infeasible".into()));
    }
    Ok(InnerMaster {
        vertex: v.iter().map(|&j| u8::from(sol.primal[j] > 0.5)).collect(),
        bound: sol.objective,
        duals: lambda_blocks
            .iter()
            .map(|&l0| sol.primal[l0..l0 + m].to_vec())
            .collect(),
    })
}
