#![allow(dead_code)]

use dne_core::nccg::SolverConfig;
use dne_core::system::{load_case, SystemCase};

/// Ramp-limited 2-bus case with one quick-start unit at the load bus.
pub fn ramp_qsu() -> SystemCase {
    load_case(include_str!("../../../../cases/ramp_qsu_2bus.json")).unwrap()
}

/// Capacities and ramps large enough that no wind realization binds.
pub fn loose() -> SystemCase {
    load_case(
        r#"{
        "buses": [{"id": 1}, {"id": 2, "is_slack": true}],
        "lines": [{"id": 1, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "capacity": 1000}],
        "units": [{"id": 1, "bus": 2, "p_min": 0, "p_max": 500, "ramp_rate": 500,
                   "marginal_cost": 20, "initial_status": "on", "initial_output": 80}],
        "wind_farms": [{"id": 1, "bus": 1, "w_min": [0, 0], "w_max": [50, 50], "forecast": [20, 25]}],
        "load": [{"bus": 2, "mw": [100, 100]}],
        "time_grid": {"n_periods": 2, "period_length": 15}
    }"#,
    )
    .unwrap()
}

/// Line-limited 2-bus case with two farms and no binding ramp or
/// commitment logic, so periods decouple.
pub fn coupling_free() -> SystemCase {
    load_case(
        r#"{
        "buses": [{"id": 1}, {"id": 2, "is_slack": true}],
        "lines": [{"id": 1, "from_bus": 1, "to_bus": 2, "reactance": 0.1, "capacity": 50}],
        "units": [{"id": 1, "bus": 2, "p_min": 0, "p_max": 200, "ramp_rate": 1000,
                   "marginal_cost": 20, "initial_status": "on", "initial_output": 50}],
        "wind_farms": [
            {"id": 1, "bus": 1, "w_min": [0, 0], "w_max": [100, 100], "forecast": [30, 40]},
            {"id": 2, "bus": 2, "w_min": [0, 0], "w_max": [60, 60], "forecast": [20, 10]}
        ],
        "load": [{"bus": 2, "mw": [100, 90]}],
        "time_grid": {"n_periods": 2, "period_length": 15}
    }"#,
    )
    .unwrap()
}

/// One bus, one unit ramping 5 MW per period.
pub fn one_bus_ramp() -> SystemCase {
    load_case(
        r#"{
        "buses": [{"id": 1, "is_slack": true}],
        "lines": [],
        "units": [{"id": 1, "bus": 1, "p_min": 0, "p_max": 100, "ramp_rate": 5,
                   "marginal_cost": 20, "initial_status": "on", "initial_output": 40}],
        "wind_farms": [{"id": 1, "bus": 1, "w_min": [0, 0], "w_max": [30, 30], "forecast": [10, 10]}],
        "load": [{"bus": 1, "mw": [50, 50]}],
        "time_grid": {"n_periods": 2, "period_length": 15}
    }"#,
    )
    .unwrap()
}

pub fn config() -> SolverConfig {
    SolverConfig::default()
}

pub fn no_qsu() -> SolverConfig {
    SolverConfig {
        recourse_qsus: dne_core::formulation::QsuSelection::None,
        ..SolverConfig::default()
    }
}
