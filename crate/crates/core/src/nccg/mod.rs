//! Nested column-and-constraint generation for the do-not-exceed box.
//!
//! The outer loop alternates between the master, which widens the box
//! subject to the vertex scenarios found so far, and the subproblem, which
//! looks for the vertex of the current box with the largest unavoidable
//! violation. It stops when that violation is below `eps_feas`.

pub mod master;
pub mod recourse;
pub mod subproblem;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ded::{sigma_from_lmps, solve_ded_with, DedError, DedResult};
use crate::formulation::{
    build_system, DneBox, FormulationError, FormulationOptions, QsuSelection, StackedSystem,
    WindKey,
};
use crate::milp::{MilpConfig, MilpError};
use crate::ptdf::compute_ptdf;
use crate::system::{CaseError, SystemCase, UnitId};

pub use master::{solve_master, MasterSolution, NccgState, Witness};
pub use recourse::{evaluate_recourse, recourse_at, weighted_recourse_at, Recourse};
pub use subproblem::{solve_subproblem, SubproblemConfig, SubproblemSolution};

/// Largest number of wind columns for which the audit enumerates every
/// vertex of the final box.
pub const AUDIT_VERTEX_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NccgError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Ded(#[from] DedError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("forecast itself is infeasible (total violation {total_slack:.6} MW): {}", rows.join(", "))]
    ForecastInfeasible { total_slack: f64, rows: Vec<String> },
    #[error("master problem infeasible: no box satisfies the stored scenarios")]
    MasterInfeasible,
    #[error("outer loop reached {iterations} iterations with violation {value:.6e} remaining")]
    OuterLimit { iterations: usize, value: f64 },
    #[error("inner loop reached {iterations} iterations")]
    InnerLimit { iterations: usize },
    #[error("subproblem returned stored scenario {vertex:?} again with violation {value:.6e}")]
    RepeatedScenario { vertex: Vec<u8>, value: f64 },
    #[error("slack program infeasible under total slack cap {0}")]
    SlackCap(f64),
    #[error("solver failure: {0}")]
    Solver(String),
}

impl NccgError {
    /// True for outcomes that describe the case rather than a solver fault.
    pub fn is_infeasibility(&self) -> bool {
        matches!(
            self,
            NccgError::ForecastInfeasible { .. }
                | NccgError::MasterInfeasible
                | NccgError::Ded(
                    DedError::Shortfall { .. } | DedError::Surplus { .. } | DedError::Infeasible
                )
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Outer stopping threshold on the worst-vertex violation, MW.
    pub eps_feas: f64,
    /// Inner loop gap, MW.
    pub eps_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Largest number of wind columns for which the inner master scans
    /// every vertex instead of branching.
    pub vertex_scan_limit: usize,
    /// Weights per period and farm; derived from LMPs when absent.
    pub sigma: Option<Vec<Vec<f64>>>,
    pub verification_samples: usize,
    pub seed: u64,
    pub screen_lines: bool,
    pub recourse_qsus: QsuSelection,
    #[serde(skip)]
    pub milp: MilpConfig,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_feas: 1e-6,
            eps_inner: 1e-6,
            max_outer: 500,
            max_inner: 500,
            vertex_scan_limit: 10,
            sigma: None,
            verification_samples: 200,
            seed: 0,
            screen_lines: true,
            recourse_qsus: QsuSelection::All,
            milp: MilpConfig::default(),
        }
    }
}

impl SolverConfig {
    fn validate(&self, case: &SystemCase) -> Result<(), NccgError> {
        if !(self.eps_feas > 0.0 && self.eps_inner > 0.0) {
            return Err(NccgError::InvalidConfig(
                "tolerances must be positive".into(),
            ));
        }
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(NccgError::InvalidConfig(
                "iteration limits must be positive".into(),
            ));
        }
        if let Some(sigma) = &self.sigma {
            let shape_ok = sigma.len() == case.n_periods()
                && sigma.iter().all(|r| r.len() == case.wind_farms.len());
            if !shape_ok {
                return Err(NccgError::InvalidConfig(
                    "sigma must have one row per period and one entry per farm".into(),
                ));
            }
            if sigma.iter().flatten().any(|s| !s.is_finite() || *s < 0.0) {
                return Err(NccgError::InvalidConfig(
                    "sigma entries must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(())
    }

    fn subproblem(&self) -> SubproblemConfig {
        SubproblemConfig {
            eps_inner: self.eps_inner,
            max_inner: self.max_inner,
            scan_limit: self.vertex_scan_limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub master_objective: f64,
    /// Worst-vertex violation of the master's box.
    pub violation: f64,
    pub vertex: Vec<u8>,
    pub inner_iterations: usize,
    pub inner_bound: f64,
}

/// Final dispatch and commitment for one stored scenario, with the largest
/// constraint residual at its realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub vertex: Vec<u8>,
    pub wind: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub max_residual: f64,
}

/// Independent re-evaluation of the final box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub vertices_checked: usize,
    pub max_vertex_violation: f64,
    pub samples_checked: usize,
    pub max_sample_violation: f64,
    pub tolerance: f64,
}

impl Audit {
    pub fn passed(&self) -> bool {
        self.max_vertex_violation <= self.tolerance && self.max_sample_violation <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DneSolution {
    /// Zero-based periods covered.
    pub periods: Vec<usize>,
    pub w_keys: Vec<WindKey>,
    pub dne_box: DneBox,
    pub sigma: Vec<f64>,
    pub objective: f64,
    pub enabled_qsus: Vec<UnitId>,
    pub iterations: Vec<IterationRecord>,
    pub certificates: Vec<Certificate>,
    pub audit: Audit,
}

impl DneSolution {
    /// `sum sigma (u - l)` over the columns of period `t`.
    pub fn period_objective(&self, t: usize) -> f64 {
        self.columns(t)
            .map(|j| self.sigma[j] * (self.dne_box.upper[j] - self.dne_box.lower[j]))
            .sum()
    }

    /// Summed lower bound, upper bound and forecast over farms in period `t`.
    pub fn period_totals(&self, t: usize) -> (f64, f64, f64) {
        self.columns(t).fold((0.0, 0.0, 0.0), |(l, u, f), j| {
            (
                l + self.dne_box.lower[j],
                u + self.dne_box.upper[j],
                f + self.dne_box.forecast[j],
            )
        })
    }

    fn columns(&self, t: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.w_keys.len()).filter(move |&j| self.w_keys[j].period == t)
    }
}

/// Everything the solver needs that depends only on the case: shift
/// factors, the dispatch at forecast, weights and the full system.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub ded: DedResult,
    pub sigma: Vec<Vec<f64>>,
    pub system: StackedSystem,
    pub enabled_qsus: Vec<UnitId>,
}

pub fn prepare(case: &SystemCase, config: &SolverConfig) -> Result<Prepared, NccgError> {
    config.validate(case)?;
    let ptdf = compute_ptdf(case)?;
    let ded = solve_ded_with(case, &ptdf)?;
    let sigma = match &config.sigma {
        Some(s) => s.clone(),
        None => sigma_from_lmps(&ded, case),
    };
    let options = FormulationOptions {
        recourse_qsus: config.recourse_qsus.clone(),
        screen_lines: config.screen_lines,
    };
    let system = build_system(case, &ptdf, &ded.ddp, &sigma, &options)?;
    let enabled_qsus = config.recourse_qsus.resolve(case)?.into_iter().collect();
    Ok(Prepared {
        ded,
        sigma,
        system,
        enabled_qsus,
    })
}

/// Multi-period box over the whole horizon.
pub fn solve_dne(case: &SystemCase, config: &SolverConfig) -> Result<DneSolution, NccgError> {
    let prepared = prepare(case, config)?;
    solve_prepared(case, &prepared, None, config)
}

/// Box for period `t` alone (zero-based), ignoring coupling to other
/// periods except through the initial conditions.
pub fn solve_single_period(
    case: &SystemCase,
    t: usize,
    config: &SolverConfig,
) -> Result<DneSolution, NccgError> {
    let prepared = prepare(case, config)?;
    solve_prepared(case, &prepared, Some(t), config)
}

pub fn solve_prepared(
    case: &SystemCase,
    prepared: &Prepared,
    period: Option<usize>,
    config: &SolverConfig,
) -> Result<DneSolution, NccgError> {
    let sys = match period {
        Some(t) if t >= case.n_periods() => {
            return Err(NccgError::InvalidConfig(format!(
                "period {} outside horizon of {}",
                t + 1,
                case.n_periods()
            )))
        }
        Some(t) => prepared.system.restrict_to_period(t),
        None => prepared.system.clone(),
    };
    let bounds = DneBox::capacity(case, &sys.w_keys);
    let sys = if config.screen_lines {
        sys.screen_line_rows(&bounds.w_min, &bounds.w_max)
            .map_err(MilpError::from)?
    } else {
        sys
    };
    debug!("{} rows after screening", sys.n_rows());
    let run = solve_system(&sys, &bounds, config)?;
    Ok(DneSolution {
        periods: sys.periods.clone(),
        w_keys: sys.w_keys.clone(),
        sigma: sys.sigma.clone(),
        enabled_qsus: prepared.enabled_qsus.clone(),
        dne_box: run.dne_box,
        objective: run.objective,
        iterations: run.iterations,
        certificates: run.certificates,
        audit: run.audit,
    })
}

/// Result of the outer loop on an assembled system.
#[derive(Debug, Clone, PartialEq)]
pub struct NccgRun {
    pub dne_box: DneBox,
    pub objective: f64,
    pub iterations: Vec<IterationRecord>,
    pub certificates: Vec<Certificate>,
    pub audit: Audit,
    pub state: NccgState,
}

/// Runs the outer loop on `sys`; `bounds` supplies capacity limits and
/// the forecast.
pub fn solve_system(
    sys: &StackedSystem,
    bounds: &DneBox,
    config: &SolverConfig,
) -> Result<NccgRun, NccgError> {
    let milp = &config.milp;
    let at_forecast = recourse_at(sys, &bounds.forecast, milp)?;
    if at_forecast.total_slack > config.eps_feas {
        let rows = at_forecast
            .violated_rows(config.eps_feas)
            .into_iter()
            .map(|(i, s)| format!("{} by {s:.6}", sys.rows[i]))
            .collect();
        return Err(NccgError::ForecastInfeasible {
            total_slack: at_forecast.total_slack,
            rows,
        });
    }

    let mut state = NccgState::default();
    let mut iterations = Vec::new();
    loop {
        let master = solve_master(sys, bounds, &state, milp)?.ok_or(NccgError::MasterInfeasible)?;
        state.master_objectives.push(master.objective);
        let sub = solve_subproblem(sys, &master.dne_box, &config.subproblem(), milp)?;
        let record = IterationRecord {
            iteration: iterations.len() + 1,
            master_objective: master.objective,
            violation: sub.value,
            vertex: sub.vertex.clone(),
            inner_iterations: sub.inner_iterations,
            inner_bound: sub.bound,
        };
        info!(
            "iteration {}: master {:.6}, violation {:.3e}, {} inner",
            record.iteration, record.master_objective, record.violation, record.inner_iterations
        );
        iterations.push(record);

        if sub.value <= config.eps_feas {
            let certificates = certify(sys, &master);
            let audit = audit_box(sys, &master.dne_box, config)?;
            return Ok(NccgRun {
                objective: master.objective,
                dne_box: master.dne_box,
                iterations,
                certificates,
                audit,
                state,
            });
        }
        if state.contains(&sub.vertex) {
            return Err(NccgError::RepeatedScenario {
                vertex: sub.vertex,
                value: sub.value,
            });
        }
        if iterations.len() >= config.max_outer {
            return Err(NccgError::OuterLimit {
                iterations: iterations.len(),
                value: sub.value,
            });
        }
        debug!("adding scenario {:?}", sub.vertex);
        state.scenarios.push(sub.vertex);
    }
}

fn certify(sys: &StackedSystem, master: &MasterSolution) -> Vec<Certificate> {
    master
        .witnesses
        .iter()
        .map(|w| {
            let v: Vec<f64> = w.vertex.iter().map(|&b| f64::from(b)).collect();
            let wind = master.dne_box.realize(&v);
            let max_residual = sys.residual(&w.x, &w.z, &wind).max().max(0.0);
            Certificate {
                vertex: w.vertex.clone(),
                wind,
                x: w.x.clone(),
                z: w.z.clone(),
                max_residual,
            }
        })
        .collect()
}

/// Re-evaluates the minimum slack at every vertex (small boxes) and at
/// seeded uniform samples of the box.
pub fn audit_box(
    sys: &StackedSystem,
    dne: &DneBox,
    config: &SolverConfig,
) -> Result<Audit, NccgError> {
    let n = dne.len();
    let vertices: Vec<Vec<f64>> = if n <= AUDIT_VERTEX_LIMIT {
        (0..1usize << n)
            .map(|mask| (0..n).map(|j| ((mask >> j) & 1) as f64).collect())
            .collect()
    } else {
        Vec::new()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let samples: Vec<Vec<f64>> = (0..config.verification_samples)
        .map(|_| (0..n).map(|_| rng.gen::<f64>()).collect())
        .collect();

    let worst = |points: &[Vec<f64>]| -> Result<f64, NccgError> {
        let values = points
            .par_iter()
            .map(|v| evaluate_recourse(sys, dne, v, &config.milp).map(|r| r.total_slack))
            .collect::<Result<Vec<f64>, NccgError>>()?;
        Ok(values.into_iter().fold(0.0, f64::max))
    };
    Ok(Audit {
        vertices_checked: vertices.len(),
        max_vertex_violation: worst(&vertices)?,
        samples_checked: samples.len(),
        max_sample_violation: worst(&samples)?,
        tolerance: config.eps_feas,
    })
}
