//! Master problem: the widest weighted box for which every stored vertex
//! scenario admits a corrective dispatch with its own commitment.

use serde::{Deserialize, Serialize};

use crate::formulation::{DneBox, StackedSystem};
use crate::lp::{LinearProgram, Relation, Sense};
use crate::milp::{solve_milp, MilpConfig, MixedIntegerProgram};

use super::NccgError;

/// Vertex scenarios accumulated by the outer loop, and the master
/// objective after each solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NccgState {
    /// Each entry is a 0/1 vector over the wind columns; 1 picks the upper
    /// bound.
    pub scenarios: Vec<Vec<u8>>,
    pub master_objectives: Vec<f64>,
}

impl NccgState {
    pub fn contains(&self, vertex: &[u8]) -> bool {
        self.scenarios.iter().any(|s| s == vertex)
    }
}

/// Dispatch and commitment that keep one stored scenario feasible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub vertex: Vec<u8>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MasterSolution {
    pub dne_box: DneBox,
    pub objective: f64,
    pub witnesses: Vec<Witness>,
}

/// Solves the master over the capacity limits and forecast in `bounds`.
/// Returns `None` when no box, not even the forecast point, satisfies the
/// stored scenarios.
pub fn solve_master(
    sys: &StackedSystem,
    bounds: &DneBox,
    state: &NccgState,
    config: &MilpConfig,
) -> Result<Option<MasterSolution>, NccgError> {
    let n = sys.n_w();
    if bounds.len() != n {
        return Err(NccgError::InvalidConfig(format!(
            "box of {} for {n} wind columns",
            bounds.len()
        )));
    }
    let (nx, nz, m) = (sys.n_x(), sys.n_z(), sys.n_rows());

    let mut lp = LinearProgram::new(Sense::Maximize);
    let l: Vec<usize> = (0..n)
        .map(|j| lp.add_var(-sys.sigma[j], bounds.w_min[j], bounds.forecast[j]))
        .collect();
    let u: Vec<usize> = (0..n)
        .map(|j| lp.add_var(sys.sigma[j], bounds.forecast[j], bounds.w_max[j]))
        .collect();
    let mut integers = Vec::new();
    let mut blocks = Vec::with_capacity(state.scenarios.len());

    for vertex in &state.scenarios {
        let x0 = lp.num_vars();
        for _ in 0..nx {
            lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
        }
        let z0 = lp.num_vars();
        for _ in 0..nz {
            integers.push(lp.add_var(0.0, 0.0, 1.0));
        }
        blocks.push((x0, z0));
        for i in 0..m {
            let mut coeffs: Vec<(usize, f64)> = Vec::new();
            for c in 0..nx {
                let a = sys.dispatch[(i, c)];
                if a != 0.0 {
                    coeffs.push((x0 + c, a));
                }
            }
            for c in 0..nz {
                let a = sys.commitment[(i, c)];
                if a != 0.0 {
                    coeffs.push((z0 + c, a));
                }
            }
            for j in 0..n {
                let k = sys.wind[(i, j)];
                if k != 0.0 {
                    coeffs.push((if vertex[j] == 1 { u[j] } else { l[j] }, k));
                }
            }
            lp.add_constraint(coeffs, Relation::Le, sys.rhs[i]);
        }
    }

    let sol = solve_milp(&MixedIntegerProgram::new(lp, integers), config)?;
    if !sol.is_optimal() {
        return Ok(None);
    }

    let lower: Vec<f64> = (0..n)
        .map(|j| sol.primal[l[j]].clamp(bounds.w_min[j], bounds.forecast[j]))
        .collect();
    let upper: Vec<f64> = (0..n)
        .map(|j| sol.primal[u[j]].clamp(bounds.forecast[j], bounds.w_max[j]))
        .collect();
    let objective = (0..n).map(|j| sys.sigma[j] * (upper[j] - lower[j])).sum();
    let witnesses = state
        .scenarios
        .iter()
        .zip(&blocks)
        .map(|(vertex, &(x0, z0))| Witness {
            vertex: vertex.clone(),
            x: sol.primal[x0..x0 + nx].to_vec(),
            z: sol.primal[z0..z0 + nz].to_vec(),
        })
        .collect();
    Ok(Some(MasterSolution {
        dne_box: DneBox {
            lower,
            upper,
            ..bounds.clone()
        },
        objective,
        witnesses,
    }))
}
