//! Power system case data: buses, DC lines, thermal units, wind farms and
//! per-period bus loads, plus the JSON case-file reader and writer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($name:ident, $tag:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($tag, " {}"), self.0)
            }
        }
    };
}

id_type!(BusId, "bus");
id_type!(LineId, "line");
id_type!(UnitId, "unit");
id_type!(FarmId, "wind farm");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: BusId,
    #[serde(default)]
    pub is_slack: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub id: LineId,
    pub from_bus: BusId,
    pub to_bus: BusId,
    /// Series reactance, per unit.
    pub reactance: f64,
    /// Thermal limit, MW.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Commitment {
    On,
    Off,
}

impl Commitment {
    pub fn is_on(self) -> bool {
        self == Commitment::On
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalUnit {
    pub id: UnitId,
    pub bus: BusId,
    pub p_min: f64,
    pub p_max: f64,
    /// MW per period, both directions.
    pub ramp_rate: f64,
    /// $/MWh.
    pub marginal_cost: f64,
    #[serde(default)]
    pub is_quick_start: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_up: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_down: Option<u32>,
    /// Output cap in the first period after a start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub startup_limit: Option<f64>,
    pub initial_status: Commitment,
    pub initial_output: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindFarm {
    pub id: FarmId,
    pub bus: BusId,
    pub w_min: Vec<f64>,
    pub w_max: Vec<f64>,
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusLoad {
    pub bus: BusId,
    pub mw: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub n_periods: usize,
    /// Minutes.
    pub period_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub units: Vec<ThermalUnit>,
    pub wind_farms: Vec<WindFarm>,
    pub load: Vec<BusLoad>,
    pub time_grid: TimeGrid,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CaseError {
    #[error("case file parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid case: {element}: {message}")]
    Invalid { element: String, message: String },
    #[error("network is disconnected: {0} cannot reach the slack bus")]
    Disconnected(BusId),
    #[error("reduced susceptance matrix is singular")]
    Singular,
}

fn invalid(element: impl fmt::Display, message: impl Into<String>) -> CaseError {
    CaseError::Invalid {
        element: element.to_string(),
        message: message.into(),
    }
}

/// Parses and validates a JSON case document.
pub fn load_case(source: &str) -> Result<SystemCase, CaseError> {
    let case: SystemCase = serde_json::from_str(source).map_err(|e| CaseError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    case.validate()?;
    Ok(case)
}

impl SystemCase {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("case data always serializes")
    }

    pub fn n_periods(&self) -> usize {
        self.time_grid.n_periods
    }

    pub fn slack_index(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.is_slack)
            .expect("validated case has a slack bus")
    }

    /// Position of a bus id in `buses`.
    pub fn bus_index(&self, id: BusId) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// MW load per bus position and period.
    pub fn bus_load(&self) -> Vec<Vec<f64>> {
        let t = self.n_periods();
        let mut out = vec![vec![0.0; t]; self.buses.len()];
        for entry in &self.load {
            if let Some(b) = self.bus_index(entry.bus) {
                for (slot, mw) in out[b].iter_mut().zip(&entry.mw) {
                    *slot += mw;
                }
            }
        }
        out
    }

    pub fn total_load(&self, t: usize) -> f64 {
        self.load.iter().map(|l| l.mw[t]).sum()
    }

    /// Keeps the first `n` periods.
    pub fn truncated(&self, n: usize) -> Result<SystemCase, CaseError> {
        if n == 0 || n > self.n_periods() {
            return Err(invalid(
                "time_grid",
                format!("cannot truncate {} periods to {n}", self.n_periods()),
            ));
        }
        let mut out = self.clone();
        out.time_grid.n_periods = n;
        for farm in &mut out.wind_farms {
            farm.w_min.truncate(n);
            farm.w_max.truncate(n);
            farm.forecast.truncate(n);
        }
        for load in &mut out.load {
            load.mw.truncate(n);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), CaseError> {
        let grid = &self.time_grid;
        if grid.n_periods == 0 {
            return Err(invalid("time_grid", "n_periods must be at least 1"));
        }
        if !(grid.period_length > 0.0) || !grid.period_length.is_finite() {
            return Err(invalid("time_grid", "period_length must be positive"));
        }
        let t = grid.n_periods;

        if self.buses.is_empty() {
            return Err(invalid("buses", "at least one bus is required"));
        }
        let mut bus_ids = BTreeSet::new();
        for bus in &self.buses {
            if !bus_ids.insert(bus.id) {
                return Err(invalid(bus.id, "duplicate id"));
            }
        }
        let slacks = self.buses.iter().filter(|b| b.is_slack).count();
        if slacks != 1 {
            return Err(invalid(
                "buses",
                format!("exactly one slack bus required, found {slacks}"),
            ));
        }
        let bus_exists = |owner: &dyn fmt::Display, bus: BusId| {
            if bus_ids.contains(&bus) {
                Ok(())
            } else {
                Err(invalid(
                    owner,
                    format!("references {bus}, which does not exist"),
                ))
            }
        };

        let mut line_ids = BTreeSet::new();
        for line in &self.lines {
            if !line_ids.insert(line.id) {
                return Err(invalid(line.id, "duplicate id"));
            }
            bus_exists(&line.id, line.from_bus)?;
            bus_exists(&line.id, line.to_bus)?;
            if line.from_bus == line.to_bus {
                return Err(invalid(line.id, "endpoints must differ"));
            }
            if !(line.reactance > 0.0) || !line.reactance.is_finite() {
                return Err(invalid(line.id, "reactance must be positive"));
            }
            if !(line.capacity > 0.0) || !line.capacity.is_finite() {
                return Err(invalid(line.id, "capacity must be positive"));
            }
        }

        let mut unit_ids = BTreeSet::new();
        for unit in &self.units {
            let id = unit.id;
            if !unit_ids.insert(id) {
                return Err(invalid(id, "duplicate id"));
            }
            bus_exists(&id, unit.bus)?;
            let numbers = [
                unit.p_min,
                unit.p_max,
                unit.ramp_rate,
                unit.marginal_cost,
                unit.initial_output,
            ];
            if numbers.iter().any(|v| !v.is_finite()) {
                return Err(invalid(id, "all quantities must be finite"));
            }
            if unit.p_min < 0.0 || unit.p_min > unit.p_max {
                return Err(invalid(
                    id,
                    format!(
                        "requires 0 <= p_min <= p_max, got [{}, {}]",
                        unit.p_min, unit.p_max
                    ),
                ));
            }
            if unit.ramp_rate < 0.0 {
                return Err(invalid(id, "ramp_rate must be nonnegative"));
            }
            if unit.initial_output < 0.0 {
                return Err(invalid(id, "initial_output must be nonnegative"));
            }
            if !unit.initial_status.is_on() && unit.initial_output != 0.0 {
                return Err(invalid(
                    id,
                    "an initially off unit must have initial_output = 0",
                ));
            }
            if unit.is_quick_start {
                match (unit.min_up, unit.min_down) {
                    (Some(up), Some(down)) if up >= 1 && down >= 1 => {}
                    _ => {
                        return Err(invalid(
                            id,
                            "quick-start units need min_up >= 1 and min_down >= 1",
                        ))
                    }
                }
                match unit.startup_limit {
                    Some(su) if su.is_finite() && su >= unit.p_min && su <= unit.p_max => {}
                    _ => {
                        return Err(invalid(
                            id,
                            "quick-start units need p_min <= startup_limit <= p_max",
                        ));
                    }
                }
            }
        }

        let mut farm_ids = BTreeSet::new();
        for farm in &self.wind_farms {
            let id = farm.id;
            if !farm_ids.insert(id) {
                return Err(invalid(id, "duplicate id"));
            }
            bus_exists(&id, farm.bus)?;
            for (name, series) in [
                ("w_min", &farm.w_min),
                ("w_max", &farm.w_max),
                ("forecast", &farm.forecast),
            ] {
                if series.len() != t {
                    return Err(invalid(
                        id,
                        format!("{name} has {} entries, expected {t}", series.len()),
                    ));
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(id, format!("{name} must be finite")));
                }
            }
            for p in 0..t {
                let (lo, f, hi) = (farm.w_min[p], farm.forecast[p], farm.w_max[p]);
                if !(lo <= f && f <= hi) {
                    return Err(invalid(
                        id,
                        format!(
                            "period {}: w_min <= forecast <= w_max violated ({lo} <= {f} <= {hi})",
                            p + 1
                        ),
                    ));
                }
            }
        }

        let mut load_buses = BTreeSet::new();
        for entry in &self.load {
            bus_exists(&format!("load at {}", entry.bus), entry.bus)?;
            if !load_buses.insert(entry.bus) {
                return Err(invalid(entry.bus, "duplicate load entry"));
            }
            if entry.mw.len() != t {
                return Err(invalid(
                    entry.bus,
                    format!("load has {} entries, expected {t}", entry.mw.len()),
                ));
            }
            if entry.mw.iter().any(|v| !v.is_finite()) {
                return Err(invalid(entry.bus, "load must be finite"));
            }
        }
        for p in 0..t {
            if self.total_load(p) < 0.0 {
                return Err(invalid(
                    "load",
                    format!("period {}: total load is negative", p + 1),
                ));
            }
        }
        Ok(())
    }

    /// Number of lines incident to each bus position.
    pub fn adjacency(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for line in &self.lines {
            let (f, t) = (
                self.bus_index(line.from_bus).unwrap(),
                self.bus_index(line.to_bus).unwrap(),
            );
            adj.entry(f).or_default().push(t);
            adj.entry(t).or_default().push(f);
        }
        adj
    }
}
