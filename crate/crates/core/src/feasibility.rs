//! Checks concrete wind trajectories against the corrective-dispatch
//! constraints, and searches for trajectories that every single-period box
//! admits but the multi-period box excludes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formulation::{
    build_system, FormulationError, FormulationOptions, QsuSelection, StackedSystem,
};
use crate::milp::MilpConfig;
use crate::nccg::{recourse_at, weighted_recourse_at, DneSolution, NccgError};
use crate::ptdf::compute_ptdf;
use crate::system::{CaseError, FarmId, SystemCase};

/// Largest number of wind columns for which the search enumerates every
/// vertex of the single-period boxes.
pub const ENUMERATION_LIMIT: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Formulation(#[from] FormulationError),
    #[error(transparent)]
    Nccg(#[from] NccgError),
    #[error("trajectory: {0}")]
    Trajectory(String),
}

/// Wind output in MW, indexed `[period][farm]` with farms in case order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindTrajectory {
    pub farms: Vec<FarmId>,
    pub mw: Vec<Vec<f64>>,
}

impl WindTrajectory {
    pub fn forecast(case: &SystemCase) -> Self {
        Self {
            farms: case.wind_farms.iter().map(|f| f.id).collect(),
            mw: (0..case.n_periods())
                .map(|t| case.wind_farms.iter().map(|f| f.forecast[t]).collect())
                .collect(),
        }
    }

    /// Builds from values in stacked wind-column order (period major).
    pub fn from_columns(case: &SystemCase, values: &[f64]) -> Self {
        let n_f = case.wind_farms.len();
        Self {
            farms: case.wind_farms.iter().map(|f| f.id).collect(),
            mw: values.chunks(n_f.max(1)).map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn columns(&self) -> Vec<f64> {
        self.mw.concat()
    }

    pub fn validate(&self, case: &SystemCase) -> Result<(), FeasibilityError> {
        let ids: Vec<FarmId> = case.wind_farms.iter().map(|f| f.id).collect();
        if self.farms != ids {
            return Err(FeasibilityError::Trajectory(
                "farms differ from the case".into(),
            ));
        }
        if self.mw.len() != case.n_periods() || self.mw.iter().any(|r| r.len() != ids.len()) {
            return Err(FeasibilityError::Trajectory(format!(
                "expected {} periods x {} farms",
                case.n_periods(),
                ids.len()
            )));
        }
        for (t, row) in self.mw.iter().enumerate() {
            for (j, &w) in row.iter().enumerate() {
                if !w.is_finite() {
                    return Err(FeasibilityError::Trajectory(format!(
                        "non-finite value at period {}",
                        t + 1
                    )));
                }
                if w < 0.0 && case.wind_farms[j].w_min[t] >= 0.0 {
                    return Err(FeasibilityError::Trajectory(format!(
                        "negative output {w} for {} in period {}",
                        ids[j],
                        t + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// `period,farm,mw` with one-based periods, sorted by period then farm.
    pub fn to_csv(&self) -> String {
        let mut out = csv::Writer::from_writer(Vec::new());
        out.write_record(["period", "farm", "mw"])
            .expect("in-memory write");
        for (t, row) in self.mw.iter().enumerate() {
            for (farm, w) in self.farms.iter().zip(row) {
                out.write_record([(t + 1).to_string(), farm.0.to_string(), format!("{w:.6}")])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(out.into_inner().expect("in-memory write")).expect("ascii output")
    }

    /// Reads a trajectory for `case`; every (period, farm) pair must appear
    /// exactly once.
    pub fn from_csv(case: &SystemCase, text: &str) -> Result<Self, FeasibilityError> {
        #[derive(Deserialize)]
        struct Row {
            period: usize,
            farm: u32,
            mw: f64,
        }
        let n_t = case.n_periods();
        let farms: Vec<FarmId> = case.wind_farms.iter().map(|f| f.id).collect();
        let mut mw = vec![vec![None; farms.len()]; n_t];
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| FeasibilityError::Trajectory(e.to_string()))?
            .clone();
        if headers.iter().collect::<Vec<_>>() != ["period", "farm", "mw"] {
            return Err(FeasibilityError::Trajectory(
                "header must be period,farm,mw".into(),
            ));
        }
        for (i, record) in reader.deserialize::<Row>().enumerate() {
            let row =
                record.map_err(|e| FeasibilityError::Trajectory(format!("row {}: {e}", i + 1)))?;
            if row.period == 0 || row.period > n_t {
                return Err(FeasibilityError::Trajectory(format!(
                    "row {}: period {} out of range",
                    i + 1,
                    row.period
                )));
            }
            let j = farms.iter().position(|f| f.0 == row.farm).ok_or_else(|| {
                FeasibilityError::Trajectory(format!("row {}: unknown farm {}", i + 1, row.farm))
            })?;
            let slot = &mut mw[row.period - 1][j];
            if slot.is_some() {
                return Err(FeasibilityError::Trajectory(format!(
                    "row {}: duplicate entry for period {} farm {}",
                    i + 1,
                    row.period,
                    row.farm
                )));
            }
            *slot = Some(row.mw);
        }
        let mw = mw
            .into_iter()
            .enumerate()
            .map(|(t, row)| {
                row.into_iter()
                    .zip(&farms)
                    .map(|(w, f)| {
                        w.ok_or_else(|| {
                            FeasibilityError::Trajectory(format!("missing period {} {f}", t + 1))
                        })
                    })
                    .collect::<Result<Vec<f64>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let trajectory = Self { farms, mw };
        trajectory.validate(case)?;
        Ok(trajectory)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOptions {
    pub recourse_qsus: QsuSelection,
    pub eps_feas: f64,
    pub milp: MilpConfig,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            recourse_qsus: QsuSelection::All,
            eps_feas: 1e-6,
            milp: MilpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolation {
    /// Row label, e.g. `ramp_up(unit 1, t=2)`.
    pub row: String,
    pub constraint: String,
    /// One-based.
    pub period: usize,
    pub mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioCheck {
    pub feasible: bool,
    pub total_slack: f64,
    pub violations: Vec<RowViolation>,
}

impl ScenarioCheck {
    pub fn violates(&self, constraint_prefix: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.constraint.starts_with(constraint_prefix))
    }
}

/// Unscreened system used for checking; the weights are irrelevant here.
pub fn check_system(
    case: &SystemCase,
    ddp: &[Vec<f64>],
    qsus: &QsuSelection,
) -> Result<StackedSystem, FeasibilityError> {
    let ptdf = compute_ptdf(case)?;
    let sigma = vec![vec![0.0; case.wind_farms.len()]; case.n_periods()];
    let options = FormulationOptions {
        recourse_qsus: qsus.clone(),
        screen_lines: false,
    };
    Ok(build_system(case, &ptdf, ddp, &sigma, &options)?)
}

pub fn check_scenario(
    case: &SystemCase,
    ddp: &[Vec<f64>],
    trajectory: &WindTrajectory,
    options: &CheckOptions,
) -> Result<ScenarioCheck, FeasibilityError> {
    trajectory.validate(case)?;
    let sys = check_system(case, ddp, &options.recourse_qsus)?;
    check_on_system(&sys, &trajectory.columns(), options)
}

/// Minimal total slack at `w`. When positive, a second solve keeps the
/// total at its minimum and moves violation off the balance and output
/// limit rows where possible, so the report names the limiting resource.
pub fn check_on_system(
    sys: &StackedSystem,
    w: &[f64],
    options: &CheckOptions,
) -> Result<ScenarioCheck, FeasibilityError> {
    let first = recourse_at(sys, w, &options.milp)?;
    if first.total_slack <= options.eps_feas {
        return Ok(ScenarioCheck {
            feasible: true,
            total_slack: first.total_slack,
            violations: Vec::new(),
        });
    }
    let weights: Vec<f64> = sys
        .rows
        .iter()
        .map(|r| match r.constraint.as_str() {
            c if c.starts_with("balance") => 2.0,
            "p_max" | "p_min" | "startup_cap" => 1.5,
            _ => 1.0,
        })
        .collect();
    let cap = first.total_slack * (1.0 + 1e-9) + 1e-9;
    let attributed = weighted_recourse_at(sys, w, &weights, cap, &options.milp)?;
    let violations = attributed
        .violated_rows(options.eps_feas)
        .into_iter()
        .map(|(i, mw)| RowViolation {
            row: sys.rows[i].to_string(),
            constraint: sys.rows[i].constraint.clone(),
            period: sys.rows[i].period + 1,
            mw,
        })
        .collect();
    Ok(ScenarioCheck {
        feasible: false,
        total_slack: first.total_slack,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOptions {
    pub check: CheckOptions,
    pub seed: u64,
    /// Random vertices drawn when enumeration is too large.
    pub samples: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            check: CheckOptions::default(),
            seed: 0,
            samples: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolatingTrajectory {
    pub trajectory: WindTrajectory,
    pub check: ScenarioCheck,
}

/// Looks for a vertex of the single-period boxes outside the multi-period
/// box, preferring one that the checker finds infeasible. `singles[t]`
/// must be the single-period solution for period `t`.
pub fn find_violating_trajectory(
    case: &SystemCase,
    ddp: &[Vec<f64>],
    singles: &[DneSolution],
    multi: &DneSolution,
    options: &SearchOptions,
) -> Result<Option<ViolatingTrajectory>, FeasibilityError> {
    let n = multi.w_keys.len();
    let mut lower = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for (j, key) in multi.w_keys.iter().enumerate() {
        let single = singles
            .iter()
            .find(|s| s.periods == [key.period])
            .ok_or_else(|| {
                FeasibilityError::Trajectory(format!(
                    "no single-period box for period {}",
                    key.period + 1
                ))
            })?;
        let k = single
            .w_keys
            .iter()
            .position(|s| s == key)
            .expect("same case");
        lower[j] = single.dne_box.lower[k];
        upper[j] = single.dne_box.upper[k];
    }
    let outside = |w: &[f64]| {
        w.iter()
            .enumerate()
            .any(|(j, &x)| x < multi.dne_box.lower[j] || x > multi.dne_box.upper[j])
    };
    let point = |bits: &dyn Fn(usize) -> bool| -> Vec<f64> {
        (0..n)
            .map(|j| if bits(j) { upper[j] } else { lower[j] })
            .collect()
    };

    let candidates: Vec<Vec<f64>> = if n <= ENUMERATION_LIMIT {
        (0..1usize << n)
            .map(|mask| point(&|j| (mask >> j) & 1 == 1))
            .filter(|w| outside(w))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
        let mut drawn: Vec<Vec<f64>> = Vec::new();
        for _ in 0..options.samples {
            let bits: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let w = point(&|j| bits[j]);
            if outside(&w) && !drawn.contains(&w) {
                drawn.push(w);
            }
        }
        drawn
    };
    if candidates.is_empty() {
        return Ok(None);
    }

    let sys = check_system(case, ddp, &options.check.recourse_qsus)?;
    let chunk = 4 * rayon::current_num_threads().max(1);
    for batch in candidates.chunks(chunk) {
        let checks = batch
            .par_iter()
            .map(|w| check_on_system(&sys, w, &options.check))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(i) = checks.iter().position(|c| !c.feasible) {
            return Ok(Some(ViolatingTrajectory {
                trajectory: WindTrajectory::from_columns(case, &batch[i]),
                check: checks[i].clone(),
            }));
        }
    }
    let first = &candidates[0];
    Ok(Some(ViolatingTrajectory {
        trajectory: WindTrajectory::from_columns(case, first),
        check: check_on_system(&sys, first, &options.check)?,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::load_case;

    #[test]
    fn csv_round_trip() {
        let case = load_case(crate::system::tests::TWO_BUS).unwrap();
        let t = WindTrajectory {
            farms: vec![case.wind_farms[0].id],
            mw: vec![vec![12.5]],
        };
        let text = t.to_csv();
        assert_eq!(text.lines().next(), Some("period,farm,mw"));
        assert_eq!(WindTrajectory::from_csv(&case, &text).unwrap(), t);
    }

    #[test]
    fn csv_rejects_missing_and_duplicate_rows() {
        let case = load_case(crate::system::tests::TWO_BUS).unwrap();
        let id = case.wind_farms[0].id.0;
        assert!(WindTrajectory::from_csv(&case, "period,farm,mw\n").is_err());
        let dup = format!("period,farm,mw\n1,{id},1\n1,{id},2\n");
        assert!(WindTrajectory::from_csv(&case, &dup).is_err());
        assert!(WindTrajectory::from_csv(&case, "t,farm,mw\n1,1,1\n").is_err());
    }
}
