//! Dynamic economic dispatch at forecast wind, and objective weights from
//! the resulting locational marginal prices.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, Relation, Sense};
use crate::ptdf::{compute_ptdf, Ptdf};
use crate::system::{BusId, CaseError, SystemCase, UnitId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DedError {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("dispatch infeasible in period {period}: committed capacity short by {shortfall} MW")]
    Shortfall { period: usize, shortfall: f64 },
    #[error(
        "dispatch infeasible in period {period}: minimum output exceeds net load by {surplus} MW"
    )]
    Surplus { period: usize, surplus: f64 },
    #[error("dispatch infeasible: ramp or transmission limits cannot be met at forecast wind")]
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedResult {
    pub units: Vec<UnitId>,
    pub buses: Vec<BusId>,
    /// MW per unit (case order) per period.
    pub ddp: Vec<Vec<f64>>,
    /// $/MWh per bus (case order) per period.
    pub lmp: Vec<Vec<f64>>,
    pub total_cost: f64,
}

pub fn solve_ded(case: &SystemCase) -> Result<DedResult, DedError> {
    let ptdf = compute_ptdf(case)?;
    solve_ded_with(case, &ptdf)
}

pub fn solve_ded_with(case: &SystemCase, ptdf: &Ptdf) -> Result<DedResult, DedError> {
    let n_t = case.n_periods();
    let n_g = case.units.len();

    for t in 0..n_t {
        let net = case.total_load(t) - case.wind_farms.iter().map(|f| f.forecast[t]).sum::<f64>();
        let on = case.units.iter().filter(|u| u.initial_status.is_on());
        let (lo, hi) = on.fold((0.0, 0.0), |(lo, hi), u| (lo + u.p_min, hi + u.p_max));
        if net > hi + 1e-9 {
            return Err(DedError::Shortfall {
                period: t + 1,
                shortfall: net - hi,
            });
        }
        if net < lo - 1e-9 {
            return Err(DedError::Surplus {
                period: t + 1,
                surplus: lo - net,
            });
        }
    }

    let mut lp = LinearProgram::new(Sense::Minimize);
    let var = |g: usize, t: usize| t * n_g + g;
    for _ in 0..n_t {
        for unit in &case.units {
            let (lo, hi) = if unit.initial_status.is_on() {
                (unit.p_min, unit.p_max)
            } else {
                (0.0, 0.0)
            };
            lp.add_var(unit.marginal_cost, lo, hi);
        }
    }

    let bus_load = case.bus_load();
    let unit_bus: Vec<usize> = case
        .units
        .iter()
        .map(|u| case.bus_index(u.bus).unwrap())
        .collect();
    let farm_bus: Vec<usize> = case
        .wind_farms
        .iter()
        .map(|f| case.bus_index(f.bus).unwrap())
        .collect();
    let mut balance_rows = Vec::with_capacity(n_t);
    // (row, line) for forward and reverse limits.
    let mut line_rows: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n_t];
    for t in 0..n_t {
        let wind: f64 = case.wind_farms.iter().map(|f| f.forecast[t]).sum();
        let coeffs = (0..n_g).map(|g| (var(g, t), 1.0)).collect();
        balance_rows.push(lp.add_constraint(coeffs, Relation::Eq, case.total_load(t) - wind));

        for l in 0..case.lines.len() {
            let coeffs: Vec<(usize, f64)> = unit_bus
                .iter()
                .enumerate()
                .map(|(g, &b)| (var(g, t), ptdf.get(l, b)))
                .filter(|e| e.1 != 0.0)
                .collect();
            let fixed: f64 = bus_load
                .iter()
                .enumerate()
                .map(|(b, s)| ptdf.get(l, b) * s[t])
                .sum::<f64>()
                - case
                    .wind_farms
                    .iter()
                    .zip(&farm_bus)
                    .map(|(f, &b)| ptdf.get(l, b) * f.forecast[t])
                    .sum::<f64>();
            let cap = case.lines[l].capacity;
            let neg = coeffs.iter().map(|&(j, a)| (j, -a)).collect();
            let fwd = lp.add_constraint(coeffs, Relation::Le, cap + fixed);
            let rev = lp.add_constraint(neg, Relation::Le, cap - fixed);
            line_rows[t].push((fwd, rev, l));
        }

        for (g, unit) in case.units.iter().enumerate() {
            if t == 0 {
                let x0 = unit.initial_output;
                lp.add_constraint(vec![(var(g, 0), 1.0)], Relation::Le, x0 + unit.ramp_rate);
                lp.add_constraint(vec![(var(g, 0), -1.0)], Relation::Le, unit.ramp_rate - x0);
            } else {
                lp.add_constraint(
                    vec![(var(g, t), 1.0), (var(g, t - 1), -1.0)],
                    Relation::Le,
                    unit.ramp_rate,
                );
                lp.add_constraint(
                    vec![(var(g, t), -1.0), (var(g, t - 1), 1.0)],
                    Relation::Le,
                    unit.ramp_rate,
                );
            }
        }
    }

    let sol = solve_lp(&lp)?;
    match sol.status {
        LpStatus::Optimal => {}
        LpStatus::Infeasible | LpStatus::Unbounded => return Err(DedError::Infeasible),
    }

    let ddp = (0..n_g)
        .map(|g| (0..n_t).map(|t| sol.primal[var(g, t)]).collect())
        .collect();
    // LMP = d(cost)/d(load at bus): the balance price plus the congestion
    // component carried by each line's limit rows.
    let lmp = (0..case.buses.len())
        .map(|b| {
            (0..n_t)
                .map(|t| {
                    let congestion: f64 = line_rows[t]
                        .iter()
                        .map(|&(fwd, rev, l)| ptdf.get(l, b) * (sol.dual[fwd] - sol.dual[rev]))
                        .sum();
                    sol.dual[balance_rows[t]] + congestion
                })
                .collect()
        })
        .collect();

    Ok(DedResult {
        units: case.units.iter().map(|u| u.id).collect(),
        buses: case.buses.iter().map(|b| b.id).collect(),
        ddp,
        lmp,
        total_cost: sol.objective,
    })
}

/// Objective weights per period and farm, proportional to the LMP at each
/// farm's bus and normalized to sum to one. Negative prices count as zero;
/// all-zero prices give uniform weights.
pub fn sigma_from_lmps(ded: &DedResult, case: &SystemCase) -> Vec<Vec<f64>> {
    let n_t = case.n_periods();
    let n_f = case.wind_farms.len();
    let mut raw = vec![vec![0.0; n_f]; n_t];
    for (j, farm) in case.wind_farms.iter().enumerate() {
        let b = case.bus_index(farm.bus).expect("validated case");
        for t in 0..n_t {
            let price = ded.lmp[b][t];
            if price < 0.0 {
                warn!(
                    "negative LMP {price:.4} at {} in period {}; weight clamped to zero",
                    farm.bus,
                    t + 1
                );
            }
            raw[t][j] = price.max(0.0);
        }
    }
    let total: f64 = raw.iter().flatten().sum();
    if total <= 0.0 {
        let uniform = 1.0 / (n_t * n_f).max(1) as f64;
        return vec![vec![uniform; n_f]; n_t];
    }
    raw.iter()
        .map(|row| row.iter().map(|p| p / total).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::load_case;

    fn one_bus(units: &str, load: &str, n: usize) -> SystemCase {
        load_case(&format!(
            r#"{{"buses": [{{"id": 1, "is_slack": true}}], "lines": [], "units": [{units}],
                "wind_farms": [], "load": [{{"bus": 1, "mw": {load}}}],
                "time_grid": {{"n_periods": {n}, "period_length": 5}}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn single_marginal_unit() {
        let case = one_bus(
            r#"{"id": 1, "bus": 1, "p_min": 0, "p_max": 200, "ramp_rate": 50, "marginal_cost": 20,
                "initial_status": "on", "initial_output": 100}"#,
            "[100, 110]",
            2,
        );
        let ded = solve_ded(&case).unwrap();
        assert!((ded.ddp[0][0] - 100.0).abs() < 1e-9);
        assert!((ded.ddp[0][1] - 110.0).abs() < 1e-9);
        assert!((ded.lmp[0][0] - 20.0).abs() < 1e-9);
        assert!((ded.lmp[0][1] - 20.0).abs() < 1e-9);
        assert!((ded.total_cost - 20.0 * 210.0).abs() < 1e-7);
    }

    #[test]
    fn marginal_unit_sets_price() {
        let case = one_bus(
            r#"{"id": 1, "bus": 1, "p_min": 0, "p_max": 60, "ramp_rate": 100, "marginal_cost": 10,
                "initial_status": "on", "initial_output": 60},
               {"id": 2, "bus": 1, "p_min": 0, "p_max": 100, "ramp_rate": 100, "marginal_cost": 30,
                "initial_status": "on", "initial_output": 40}"#,
            "[100]",
            1,
        );
        let ded = solve_ded(&case).unwrap();
        assert!((ded.ddp[0][0] - 60.0).abs() < 1e-9);
        assert!((ded.ddp[1][0] - 40.0).abs() < 1e-9);
        assert!((ded.lmp[0][0] - 30.0).abs() < 1e-9);
    }

    #[test]
    fn capacity_shortfall_names_period() {
        let case = one_bus(
            r#"{"id": 1, "bus": 1, "p_min": 0, "p_max": 200, "ramp_rate": 500, "marginal_cost": 20,
                "initial_status": "on", "initial_output": 100}"#,
            "[500]",
            1,
        );
        let err = solve_ded(&case).unwrap_err();
        assert_eq!(
            err,
            DedError::Shortfall {
                period: 1,
                shortfall: 300.0
            }
        );
        assert!(err.to_string().contains("period 1"));
    }

    fn ded_with(lmp: Vec<Vec<f64>>) -> DedResult {
        DedResult {
            units: vec![],
            buses: vec![],
            ddp: vec![],
            lmp,
            total_cost: 0.0,
        }
    }

    fn two_farm_case() -> SystemCase {
        load_case(
            r#"{"buses": [{"id": 1, "is_slack": true}, {"id": 2}],
                "lines": [{"id": 1, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "capacity": 10}],
                "units": [],
                "wind_farms": [{"id": 1, "bus": 1, "w_min": [0, 0], "w_max": [1, 1], "forecast": [0, 0]},
                               {"id": 2, "bus": 2, "w_min": [0, 0], "w_max": [1, 1], "forecast": [0, 0]}],
                "load": [], "time_grid": {"n_periods": 2, "period_length": 5}}"#,
        )
        .unwrap()
    }

    #[test]
    fn sigma_proportional_to_price() {
        let case = two_farm_case();
        let sigma = sigma_from_lmps(&ded_with(vec![vec![10.0, 10.0], vec![20.0, 20.0]]), &case);
        for row in &sigma {
            assert!((row[1] / row[0] - 2.0).abs() < 1e-12);
        }
        let total: f64 = sigma.iter().flatten().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_uniform_fallbacks() {
        let case = two_farm_case();
        for lmp in [
            vec![vec![5.0, 5.0], vec![5.0, 5.0]],
            vec![vec![0.0, 0.0], vec![0.0, 0.0]],
        ] {
            let sigma = sigma_from_lmps(&ded_with(lmp), &case);
            assert!(sigma.iter().flatten().all(|s| (s - 0.25).abs() < 1e-15));
        }
        let sigma = sigma_from_lmps(&ded_with(vec![vec![-5.0, 5.0], vec![5.0, 5.0]]), &case);
        assert_eq!(sigma[0][0], 0.0);
    }
}
