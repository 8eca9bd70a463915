//! Corrective-dispatch constraints in stacked matrix form.
//!
//! Every constraint is a `<=` row over three column groups: continuous unit
//! outputs `x`, discrete commitment variables `z` and wind realizations
//! `w`, so the whole horizon reads `H x + J z + K w <= h`. Equalities are
//! written as pairs of opposite inequalities so each row can carry its own
//! nonnegative slack in the recourse problem.
//!
//! Per period, units occupy one `x` column each (in case order). Each quick
//! start unit enabled for recourse owns three `z` columns: status, start
//! and stop indicators. Units without recourse commitment keep their
//! initial status for the whole horizon.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LinearProgram, LpError, LpStatus, Relation, Sense};
use crate::ptdf::Ptdf;
use crate::system::{FarmId, SystemCase, UnitId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormulationError {
    #[error("dispatch point missing for unit {unit} in period {period}")]
    MissingDdp { unit: UnitId, period: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} is not a quick-start unit of this case")]
    NotQuickStart(UnitId),
    #[error("uncertainty point outside the unit box at component {index}: {value}")]
    OutsideUnitBox { index: usize, value: f64 },
}

/// Which quick-start units may change commitment as a recourse action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum QsuSelection {
    #[default]
    All,
    None,
    Ids(Vec<UnitId>),
}

impl QsuSelection {
    /// Resolved, validated set of enabled units.
    pub fn resolve(&self, case: &SystemCase) -> Result<BTreeSet<UnitId>, FormulationError> {
        let qsus = case.units.iter().filter(|u| u.is_quick_start).map(|u| u.id);
        match self {
            QsuSelection::All => Ok(qsus.collect()),
            QsuSelection::None => Ok(BTreeSet::new()),
            QsuSelection::Ids(ids) => {
                let known: BTreeSet<UnitId> = qsus.collect();
                ids.iter()
                    .map(|id| {
                        if known.contains(id) {
                            Ok(*id)
                        } else {
                            Err(FormulationError::NotQuickStart(*id))
                        }
                    })
                    .collect()
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            QsuSelection::All => "qsu:all".into(),
            QsuSelection::None => "qsu:none".into(),
            QsuSelection::Ids(ids) => {
                let ids: Vec<String> = ids.iter().map(|i| i.0.to_string()).collect();
                format!("qsu:{}", ids.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FormulationOptions {
    pub recourse_qsus: QsuSelection,
    /// Drop line rows that no dispatch within unit output ranges and wind
    /// capacity bounds can violate.
    pub screen_lines: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Output,
    Status,
    Startup,
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarKey {
    pub kind: VarKind,
    pub unit: UnitId,
    /// Zero-based period.
    pub period: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WindKey {
    pub farm: FarmId,
    pub period: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RowLabel {
    pub constraint: String,
    pub element: String,
    /// Zero-based period the row is attached to.
    pub period: usize,
}

impl RowLabel {
    fn new(constraint: &str, element: impl fmt::Display, period: usize) -> Self {
        Self {
            constraint: constraint.to_string(),
            element: element.to_string(),
            period,
        }
    }
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}({}, t={})",
            self.constraint,
            self.element,
            self.period + 1
        )
    }
}

/// Column layout shared by all periods.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub units: Vec<UnitId>,
    /// Per unit: `Some(slot)` for recourse-committed units, else `None`.
    pub slot: Vec<Option<usize>>,
    pub farms: Vec<FarmId>,
    pub n_periods: usize,
}

impl Layout {
    pub fn new(case: &SystemCase, options: &FormulationOptions) -> Result<Self, FormulationError> {
        let enabled = options.recourse_qsus.resolve(case)?;
        let mut next = 0;
        let slot = case
            .units
            .iter()
            .map(|u| {
                enabled.contains(&u.id).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Ok(Self {
            units: case.units.iter().map(|u| u.id).collect(),
            slot,
            farms: case.wind_farms.iter().map(|f| f.id).collect(),
            n_periods: case.n_periods(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.units.len()
    }

    pub fn n_slots(&self) -> usize {
        self.slot.iter().flatten().count()
    }

    pub fn n_z(&self) -> usize {
        3 * self.n_slots()
    }

    pub fn n_w(&self) -> usize {
        self.farms.len()
    }

    pub fn enabled_units(&self) -> Vec<UnitId> {
        self.units
            .iter()
            .zip(&self.slot)
            .filter(|(_, s)| s.is_some())
            .map(|(u, _)| *u)
            .collect()
    }

    fn z_keys(&self, period: usize) -> Vec<VarKey> {
        let mut keys = Vec::new();
        for (u, s) in self.units.iter().zip(&self.slot) {
            if s.is_some() {
                for kind in [VarKind::Status, VarKind::Startup, VarKind::Shutdown] {
                    keys.push(VarKey {
                        kind,
                        unit: *u,
                        period,
                    });
                }
            }
        }
        keys
    }
}

const STATUS: usize = 0;
const START: usize = 1;
const STOP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodBlocks {
    pub period: usize,
    /// Rows x unit outputs.
    pub a: DMatrix<f64>,
    /// Rows x commitment variables.
    pub b: DMatrix<f64>,
    /// Rows x wind farms.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
    pub labels: Vec<RowLabel>,
}

impl PeriodBlocks {
    pub fn residual(&self, x: &[f64], z: &[f64], w: &[f64]) -> DVector<f64> {
        &self.a * DVector::from_column_slice(x)
            + &self.b * DVector::from_column_slice(z)
            + &self.c * DVector::from_column_slice(w)
            - &self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlocks {
    /// Per period: rows x unit outputs of that period.
    pub e: Vec<DMatrix<f64>>,
    /// Per period: rows x commitment variables of that period.
    pub f: Vec<DMatrix<f64>>,
    pub g: DVector<f64>,
    pub labels: Vec<RowLabel>,
}

impl CouplingBlocks {
    pub fn residual(&self, x: &[Vec<f64>], z: &[Vec<f64>]) -> DVector<f64> {
        let mut r = -self.g.clone();
        for t in 0..self.e.len() {
            r += &self.e[t] * DVector::from_column_slice(&x[t])
                + &self.f[t] * DVector::from_column_slice(&z[t]);
        }
        r
    }
}

struct Rows {
    x: Vec<Vec<(usize, f64)>>,
    z: Vec<Vec<(usize, f64)>>,
    w: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    labels: Vec<RowLabel>,
}

impl Rows {
    fn new() -> Self {
        Self {
            x: Vec::new(),
            z: Vec::new(),
            w: Vec::new(),
            rhs: Vec::new(),
            labels: Vec::new(),
        }
    }

    fn push(
        &mut self,
        label: RowLabel,
        x: Vec<(usize, f64)>,
        z: Vec<(usize, f64)>,
        w: Vec<(usize, f64)>,
        rhs: f64,
    ) {
        self.x.push(x);
        self.z.push(z);
        self.w.push(w);
        self.rhs.push(rhs);
        self.labels.push(label);
    }

    fn dense(entries: &[Vec<(usize, f64)>], cols: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(entries.len(), cols);
        for (i, row) in entries.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] += v;
            }
        }
        m
    }
}

/// Temporally decoupled rows of period `t`: system balance, line limits and
/// unit output limits.
pub fn build_period_blocks(
    case: &SystemCase,
    ptdf: &Ptdf,
    ddp: &[Vec<f64>],
    t: usize,
    options: &FormulationOptions,
) -> Result<PeriodBlocks, FormulationError> {
    let layout = Layout::new(case, options)?;
    build_period_blocks_with(case, ptdf, ddp, t, &layout, options.screen_lines)
}

fn build_period_blocks_with(
    case: &SystemCase,
    ptdf: &Ptdf,
    ddp: &[Vec<f64>],
    t: usize,
    layout: &Layout,
    screen_lines: bool,
) -> Result<PeriodBlocks, FormulationError> {
    if t >= case.n_periods() {
        return Err(FormulationError::DimensionMismatch(format!(
            "period {} outside a {}-period horizon",
            t + 1,
            case.n_periods()
        )));
    }
    if ddp.len() != case.units.len() {
        return Err(FormulationError::DimensionMismatch(format!(
            "{} dispatch rows for {} units",
            ddp.len(),
            case.units.len()
        )));
    }
    for (unit, row) in case.units.iter().zip(ddp) {
        if row.len() <= t || !row[t].is_finite() {
            return Err(FormulationError::MissingDdp {
                unit: unit.id,
                period: t + 1,
            });
        }
    }

    let mut rows = Rows::new();
    let load = case.total_load(t);
    let all_x: Vec<(usize, f64)> = (0..layout.n_x()).map(|g| (g, 1.0)).collect();
    let all_w: Vec<(usize, f64)> = (0..layout.n_w()).map(|j| (j, 1.0)).collect();
    let neg = |v: &[(usize, f64)]| v.iter().map(|&(j, a)| (j, -a)).collect::<Vec<_>>();
    rows.push(
        RowLabel::new("balance_up", "system", t),
        all_x.clone(),
        vec![],
        all_w.clone(),
        load,
    );
    rows.push(
        RowLabel::new("balance_down", "system", t),
        neg(&all_x),
        vec![],
        neg(&all_w),
        -load,
    );

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
    let output_range: Vec<(f64, f64)> = case
        .units
        .iter()
        .zip(&layout.slot)
        .map(|(u, s)| match (s, u.initial_status.is_on()) {
            (Some(_), _) => (0.0, u.p_max),
            (None, true) => (u.p_min, u.p_max),
            (None, false) => (0.0, 0.0),
        })
        .collect();
    for (l, line) in case.lines.iter().enumerate() {
        let gx: Vec<(usize, f64)> = unit_bus
            .iter()
            .enumerate()
            .map(|(g, &b)| (g, ptdf.get(l, b)))
            .filter(|e| e.1 != 0.0)
            .collect();
        let gw: Vec<(usize, f64)> = farm_bus
            .iter()
            .enumerate()
            .map(|(j, &b)| (j, ptdf.get(l, b)))
            .filter(|e| e.1 != 0.0)
            .collect();
        let load_flow: f64 = bus_load
            .iter()
            .enumerate()
            .map(|(b, series)| ptdf.get(l, b) * series[t])
            .sum();
        let (mut lo, mut hi) = (-load_flow, -load_flow);
        for &(g, a) in &gx {
            let (p0, p1) = output_range[g];
            lo += (a * p0).min(a * p1);
            hi += (a * p0).max(a * p1);
        }
        for &(j, a) in &gw {
            let farm = &case.wind_farms[j];
            let (w0, w1) = (farm.w_min[t], farm.w_max[t]);
            lo += (a * w0).min(a * w1);
            hi += (a * w0).max(a * w1);
        }
        if !(screen_lines && hi <= line.capacity) {
            rows.push(
                RowLabel::new("line_fwd", line.id, t),
                gx.clone(),
                vec![],
                gw.clone(),
                line.capacity + load_flow,
            );
        }
        if !(screen_lines && lo >= -line.capacity) {
            rows.push(
                RowLabel::new("line_rev", line.id, t),
                neg(&gx),
                vec![],
                neg(&gw),
                line.capacity - load_flow,
            );
        }
    }

    for (g, unit) in case.units.iter().enumerate() {
        match layout.slot[g] {
            Some(s) => {
                let z = 3 * s + STATUS;
                rows.push(
                    RowLabel::new("p_max", unit.id, t),
                    vec![(g, 1.0)],
                    vec![(z, -unit.p_max)],
                    vec![],
                    0.0,
                );
                rows.push(
                    RowLabel::new("p_min", unit.id, t),
                    vec![(g, -1.0)],
                    vec![(z, unit.p_min)],
                    vec![],
                    0.0,
                );
            }
            None => {
                let on = if unit.initial_status.is_on() {
                    1.0
                } else {
                    0.0
                };
                rows.push(
                    RowLabel::new("p_max", unit.id, t),
                    vec![(g, 1.0)],
                    vec![],
                    vec![],
                    on * unit.p_max,
                );
                rows.push(
                    RowLabel::new("p_min", unit.id, t),
                    vec![(g, -1.0)],
                    vec![],
                    vec![],
                    -on * unit.p_min,
                );
            }
        }
    }

    Ok(PeriodBlocks {
        period: t,
        a: Rows::dense(&rows.x, layout.n_x()),
        b: Rows::dense(&rows.z, layout.n_z()),
        c: Rows::dense(&rows.w, layout.n_w()),
        d: DVector::from_vec(rows.rhs),
        labels: rows.labels,
    })
}

/// Temporally coupled rows: ramping, start/stop logic, start-up output
/// caps and rolling minimum up/down windows. The initial status and output
/// of every unit enter as constants.
pub fn build_coupling_blocks(
    case: &SystemCase,
    options: &FormulationOptions,
) -> Result<CouplingBlocks, FormulationError> {
    let layout = Layout::new(case, options)?;
    Ok(build_coupling_blocks_with(case, &layout))
}

fn build_coupling_blocks_with(case: &SystemCase, layout: &Layout) -> CouplingBlocks {
    let n_t = case.n_periods();
    // Entries are (period, column, value).
    let mut ex: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut fz: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut g = Vec::new();
    let mut labels = Vec::new();
    let mut push =
        |label: RowLabel, x: Vec<(usize, usize, f64)>, z: Vec<(usize, usize, f64)>, rhs: f64| {
            labels.push(label);
            ex.push(x);
            fz.push(z);
            g.push(rhs);
        };

    for (u, unit) in case.units.iter().enumerate() {
        let ramp = unit.ramp_rate;
        let x0 = unit.initial_output;
        match layout.slot[u] {
            None => {
                for t in 0..n_t {
                    let (mut up, mut down) = (vec![(t, u, 1.0)], vec![(t, u, -1.0)]);
                    let (mut up_rhs, mut down_rhs) = (ramp, ramp);
                    if t == 0 {
                        up_rhs += x0;
                        down_rhs -= x0;
                    } else {
                        up.push((t - 1, u, -1.0));
                        down.push((t - 1, u, 1.0));
                    }
                    push(RowLabel::new("ramp_up", unit.id, t), up, vec![], up_rhs);
                    push(
                        RowLabel::new("ramp_down", unit.id, t),
                        down,
                        vec![],
                        down_rhs,
                    );
                }
            }
            Some(s) => {
                let p_max = unit.p_max;
                let su = unit.startup_limit.unwrap_or(p_max);
                let z0 = if unit.initial_status.is_on() {
                    1.0
                } else {
                    0.0
                };
                let min_up = unit.min_up.unwrap_or(1) as usize;
                let min_down = unit.min_down.unwrap_or(1) as usize;
                let col = |kind: usize| 3 * s + kind;
                for t in 0..n_t {
                    // y_t - w_t = z_t - z_{t-1}
                    let mut logic = vec![
                        (t, col(START), 1.0),
                        (t, col(STOP), -1.0),
                        (t, col(STATUS), -1.0),
                    ];
                    let mut logic_rhs = 0.0;
                    if t == 0 {
                        logic_rhs -= z0;
                    } else {
                        logic.push((t - 1, col(STATUS), 1.0));
                    }
                    let flipped = logic.iter().map(|&(p, c, v)| (p, c, -v)).collect();
                    push(
                        RowLabel::new("start_stop_logic", unit.id, t),
                        vec![],
                        logic,
                        logic_rhs,
                    );
                    push(
                        RowLabel::new("start_stop_logic_rev", unit.id, t),
                        vec![],
                        flipped,
                        -logic_rhs,
                    );
                    push(
                        RowLabel::new("start_stop_exclusive", unit.id, t),
                        vec![],
                        vec![(t, col(START), 1.0), (t, col(STOP), 1.0)],
                        1.0,
                    );

                    // x_t - x_{t-1} <= R z_{t-1} + SU y_t
                    let mut up_x = vec![(t, u, 1.0)];
                    let mut up_z = vec![(t, col(START), -su)];
                    let mut up_rhs = 0.0;
                    // x_{t-1} - x_t <= R z_t + P w_t
                    let mut down_x = vec![(t, u, -1.0)];
                    let down_z = vec![(t, col(STATUS), -ramp), (t, col(STOP), -p_max)];
                    let mut down_rhs = 0.0;
                    if t == 0 {
                        up_rhs += x0 + ramp * z0;
                        down_rhs -= x0;
                    } else {
                        up_x.push((t - 1, u, -1.0));
                        up_z.push((t - 1, col(STATUS), -ramp));
                        down_x.push((t - 1, u, 1.0));
                    }
                    push(RowLabel::new("ramp_up", unit.id, t), up_x, up_z, up_rhs);
                    push(
                        RowLabel::new("ramp_down", unit.id, t),
                        down_x,
                        down_z,
                        down_rhs,
                    );

                    push(
                        RowLabel::new("startup_cap", unit.id, t),
                        vec![(t, u, 1.0)],
                        vec![(t, col(STATUS), -p_max), (t, col(START), p_max - su)],
                        0.0,
                    );

                    let first_up = (t + 1).saturating_sub(min_up);
                    let mut window: Vec<(usize, usize, f64)> =
                        (first_up..=t).map(|p| (p, col(START), 1.0)).collect();
                    window.push((t, col(STATUS), -1.0));
                    push(RowLabel::new("min_up", unit.id, t), vec![], window, 0.0);

                    let first_down = (t + 1).saturating_sub(min_down);
                    let mut window: Vec<(usize, usize, f64)> =
                        (first_down..=t).map(|p| (p, col(STOP), 1.0)).collect();
                    window.push((t, col(STATUS), 1.0));
                    push(RowLabel::new("min_down", unit.id, t), vec![], window, 1.0);
                }
            }
        }
    }

    let rows = g.len();
    let mut e = vec![DMatrix::zeros(rows, layout.n_x()); n_t];
    let mut f = vec![DMatrix::zeros(rows, layout.n_z()); n_t];
    for i in 0..rows {
        for &(p, c, v) in &ex[i] {
            e[p][(i, c)] += v;
        }
        for &(p, c, v) in &fz[i] {
            f[p][(i, c)] += v;
        }
    }
    CouplingBlocks {
        e,
        f,
        g: DVector::from_vec(g),
        labels,
    }
}

/// The whole horizon as `H x + J z + K w <= h`.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedSystem {
    /// `H`: rows x unit outputs of every period.
    pub dispatch: DMatrix<f64>,
    /// `J`: rows x commitment variables of every period.
    pub commitment: DMatrix<f64>,
    /// `K`: rows x wind farms of every period.
    pub wind: DMatrix<f64>,
    /// `h`.
    pub rhs: DVector<f64>,
    /// Objective weight per wind column.
    pub sigma: Vec<f64>,
    pub x_keys: Vec<VarKey>,
    pub z_keys: Vec<VarKey>,
    pub w_keys: Vec<WindKey>,
    pub rows: Vec<RowLabel>,
    /// Zero-based periods covered, ascending.
    pub periods: Vec<usize>,
}

/// Places the period blocks block-diagonally and appends the coupling rows.
pub fn stack_system(
    periods: &[PeriodBlocks],
    coupling: &CouplingBlocks,
    sigma: &[Vec<f64>],
    layout: &Layout,
) -> Result<StackedSystem, FormulationError> {
    let n_t = periods.len();
    for (i, p) in periods.iter().enumerate() {
        if p.period != i {
            return Err(FormulationError::DimensionMismatch(format!(
                "period blocks must cover periods 1..={n_t} in order"
            )));
        }
        if p.a.ncols() != layout.n_x() || p.b.ncols() != layout.n_z() || p.c.ncols() != layout.n_w()
        {
            return Err(FormulationError::DimensionMismatch(format!(
                "period {} column counts",
                i + 1
            )));
        }
    }
    if coupling.e.len() != n_t || coupling.f.len() != n_t {
        return Err(FormulationError::DimensionMismatch(
            "coupling blocks cover a different horizon".into(),
        ));
    }
    if sigma.len() != n_t || sigma.iter().any(|s| s.len() != layout.n_w()) {
        return Err(FormulationError::DimensionMismatch(
            "sigma must have one weight per farm and period".into(),
        ));
    }

    let (nx, nz, nw) = (layout.n_x(), layout.n_z(), layout.n_w());
    let decoupled: usize = periods.iter().map(|p| p.labels.len()).sum();
    let total = decoupled + coupling.labels.len();
    let mut hm = DMatrix::zeros(total, nx * n_t);
    let mut jm = DMatrix::zeros(total, nz * n_t);
    let mut km = DMatrix::zeros(total, nw * n_t);
    let mut rhs = DVector::zeros(total);
    let mut rows = Vec::with_capacity(total);

    let mut r0 = 0;
    for p in periods {
        let t = p.period;
        let m = p.labels.len();
        hm.view_mut((r0, t * nx), (m, nx)).copy_from(&p.a);
        jm.view_mut((r0, t * nz), (m, nz)).copy_from(&p.b);
        km.view_mut((r0, t * nw), (m, nw)).copy_from(&p.c);
        rhs.rows_mut(r0, m).copy_from(&p.d);
        rows.extend(p.labels.iter().cloned());
        r0 += m;
    }
    let mc = coupling.labels.len();
    for t in 0..n_t {
        hm.view_mut((r0, t * nx), (mc, nx))
            .copy_from(&coupling.e[t]);
        jm.view_mut((r0, t * nz), (mc, nz))
            .copy_from(&coupling.f[t]);
    }
    rhs.rows_mut(r0, mc).copy_from(&coupling.g);
    rows.extend(coupling.labels.iter().cloned());

    let mut x_keys = Vec::new();
    let mut z_keys = Vec::new();
    let mut w_keys = Vec::new();
    for t in 0..n_t {
        x_keys.extend(layout.units.iter().map(|&unit| VarKey {
            kind: VarKind::Output,
            unit,
            period: t,
        }));
        z_keys.extend(layout.z_keys(t));
        w_keys.extend(layout.farms.iter().map(|&farm| WindKey { farm, period: t }));
    }

    Ok(StackedSystem {
        dispatch: hm,
        commitment: jm,
        wind: km,
        rhs,
        sigma: sigma.concat(),
        x_keys,
        z_keys,
        w_keys,
        rows,
        periods: (0..n_t).collect(),
    })
}

/// Assembles the full stacked system for a case.
pub fn build_system(
    case: &SystemCase,
    ptdf: &Ptdf,
    ddp: &[Vec<f64>],
    sigma: &[Vec<f64>],
    options: &FormulationOptions,
) -> Result<StackedSystem, FormulationError> {
    let layout = Layout::new(case, options)?;
    let periods = (0..case.n_periods())
        .map(|t| build_period_blocks_with(case, ptdf, ddp, t, &layout, options.screen_lines))
        .collect::<Result<Vec<_>, _>>()?;
    let coupling = build_coupling_blocks_with(case, &layout);
    stack_system(&periods, &coupling, sigma, &layout)
}

impl StackedSystem {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_x(&self) -> usize {
        self.dispatch.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.commitment.ncols()
    }

    /// Number of uncertain wind components.
    pub fn n_w(&self) -> usize {
        self.wind.ncols()
    }

    /// `H x + J z + K w - h`.
    pub fn residual(&self, x: &[f64], z: &[f64], w: &[f64]) -> DVector<f64> {
        &self.dispatch * DVector::from_column_slice(x)
            + &self.commitment * DVector::from_column_slice(z)
            + &self.wind * DVector::from_column_slice(w)
            - &self.rhs
    }

    /// `h - K w`.
    pub fn rhs_at(&self, w: &[f64]) -> DVector<f64> {
        &self.rhs - &self.wind * DVector::from_column_slice(w)
    }

    /// Restriction to one period: its own columns and every row whose
    /// support lies entirely in that period (initial conditions are
    /// already constants).
    pub fn restrict_to_period(&self, t: usize) -> StackedSystem {
        let xc: Vec<usize> = (0..self.n_x())
            .filter(|&c| self.x_keys[c].period == t)
            .collect();
        let zc: Vec<usize> = (0..self.n_z())
            .filter(|&c| self.z_keys[c].period == t)
            .collect();
        let wc: Vec<usize> = (0..self.n_w())
            .filter(|&c| self.w_keys[c].period == t)
            .collect();
        let keep: Vec<usize> = (0..self.n_rows())
            .filter(|&i| {
                let mut touches = false;
                let mut outside = false;
                let mut scan = |m: &DMatrix<f64>, period_of: &dyn Fn(usize) -> usize| {
                    for c in 0..m.ncols() {
                        if m[(i, c)] != 0.0 {
                            if period_of(c) == t {
                                touches = true;
                            } else {
                                outside = true;
                            }
                        }
                    }
                };
                scan(&self.dispatch, &|c| self.x_keys[c].period);
                scan(&self.commitment, &|c| self.z_keys[c].period);
                scan(&self.wind, &|c| self.w_keys[c].period);
                !outside && (touches || self.rows[i].period == t)
            })
            .collect();
        let pick = |m: &DMatrix<f64>, cols: &[usize]| {
            DMatrix::from_fn(keep.len(), cols.len(), |i, j| m[(keep[i], cols[j])])
        };
        StackedSystem {
            dispatch: pick(&self.dispatch, &xc),
            commitment: pick(&self.commitment, &zc),
            wind: pick(&self.wind, &wc),
            rhs: DVector::from_fn(keep.len(), |i, _| self.rhs[keep[i]]),
            sigma: wc.iter().map(|&c| self.sigma[c]).collect(),
            x_keys: xc.iter().map(|&c| self.x_keys[c]).collect(),
            z_keys: zc.iter().map(|&c| self.z_keys[c]).collect(),
            w_keys: wc.iter().map(|&c| self.w_keys[c]).collect(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            periods: vec![t],
        }
    }
}

impl StackedSystem {
    /// The system restricted to the rows in `keep`, in that order.
    pub fn select_rows(&self, keep: &[usize]) -> StackedSystem {
        let pick =
            |m: &DMatrix<f64>| DMatrix::from_fn(keep.len(), m.ncols(), |i, j| m[(keep[i], j)]);
        StackedSystem {
            dispatch: pick(&self.dispatch),
            commitment: pick(&self.commitment),
            wind: pick(&self.wind),
            rhs: DVector::from_fn(keep.len(), |i, _| self.rhs[keep[i]]),
            sigma: self.sigma.clone(),
            x_keys: self.x_keys.clone(),
            z_keys: self.z_keys.clone(),
            w_keys: self.w_keys.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            periods: self.periods.clone(),
        }
    }

    /// Drops line rows implied by the other rows for every wind output in
    /// `[w_min, w_max]`, with commitments relaxed to `[0, 1]`. Rows are
    /// tested in order against the rows still kept, so the reduced system
    /// has exactly the same feasible set.
    pub fn screen_line_rows(&self, w_min: &[f64], w_max: &[f64]) -> Result<StackedSystem, LpError> {
        let (nx, nz, nw) = (self.n_x(), self.n_z(), self.n_w());
        let mut kept: Vec<bool> = vec![true; self.n_rows()];
        let row_coeffs = |i: usize| -> Vec<(usize, f64)> {
            let mut coeffs = Vec::new();
            coeffs.extend((0..nx).map(|c| (c, self.dispatch[(i, c)])));
            coeffs.extend((0..nz).map(|c| (nx + c, self.commitment[(i, c)])));
            coeffs.extend((0..nw).map(|c| (nx + nz + c, self.wind[(i, c)])));
            coeffs.retain(|e| e.1 != 0.0);
            coeffs
        };
        for i in 0..self.n_rows() {
            if !self.rows[i].constraint.starts_with("line_") {
                continue;
            }
            let mut lp = LinearProgram::new(Sense::Maximize);
            for _ in 0..nx {
                lp.add_var(0.0, f64::NEG_INFINITY, f64::INFINITY);
            }
            for _ in 0..nz {
                lp.add_var(0.0, 0.0, 1.0);
            }
            for c in 0..nw {
                lp.add_var(0.0, w_min[c], w_max[c]);
            }
            for (j, coeff) in row_coeffs(i) {
                lp.objective[j] = coeff;
            }
            for j in (0..self.n_rows()).filter(|&j| j != i && kept[j]) {
                lp.add_constraint(row_coeffs(j), Relation::Le, self.rhs[j]);
            }
            let sol = solve_lp(&lp)?;
            if sol.status == LpStatus::Infeasible {
                return Ok(self.clone());
            }
            let h = self.rhs[i];
            if sol.is_optimal() && sol.objective <= h + 1e-9 * (1.0 + h.abs()) {
                kept[i] = false;
            }
        }
        let keep: Vec<usize> = (0..self.n_rows()).filter(|&i| kept[i]).collect();
        Ok(self.select_rows(&keep))
    }
}

/// Lower/upper wind limits per farm and period, flattened in the stacked
/// wind-column order (period major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DneBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub forecast: Vec<f64>,
    pub w_min: Vec<f64>,
    pub w_max: Vec<f64>,
}

impl DneBox {
    /// Capacity box `[w_min, w_max]` for the wind columns of `keys`.
    pub fn capacity(case: &SystemCase, keys: &[WindKey]) -> Self {
        let pick = |f: fn(&crate::system::WindFarm) -> &Vec<f64>| -> Vec<f64> {
            keys.iter()
                .map(|k| {
                    let farm = case
                        .wind_farms
                        .iter()
                        .find(|w| w.id == k.farm)
                        .expect("key from this case");
                    f(farm)[k.period]
                })
                .collect()
        };
        let w_min = pick(|f| &f.w_min);
        let w_max = pick(|f| &f.w_max);
        let forecast = pick(|f| &f.forecast);
        Self {
            lower: w_min.clone(),
            upper: w_max.clone(),
            forecast,
            w_min,
            w_max,
        }
    }

    /// The degenerate box `l = u = w*`.
    pub fn at_forecast(case: &SystemCase, keys: &[WindKey]) -> Self {
        let mut b = Self::capacity(case, keys);
        b.lower = b.forecast.clone();
        b.upper = b.forecast.clone();
        b
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// `w_min <= l <= w* <= u <= w_max` componentwise, exactly.
    pub fn is_ordered(&self) -> bool {
        (0..self.len()).all(|i| {
            self.w_min[i] <= self.lower[i]
                && self.lower[i] <= self.forecast[i]
                && self.forecast[i] <= self.upper[i]
                && self.upper[i] <= self.w_max[i]
        })
    }

    /// `l + (u - l) * v` componentwise.
    pub fn realize(&self, v: &[f64]) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.lower[i] + (self.upper[i] - self.lower[i]) * v[i])
            .collect()
    }

    pub fn width(&self) -> Vec<f64> {
        (0..self.len())
            .map(|i| self.upper[i] - self.lower[i])
            .collect()
    }

    pub fn contains(&self, w: &[f64]) -> bool {
        w.iter()
            .enumerate()
            .all(|(i, &x)| self.lower[i] <= x && x <= self.upper[i])
    }
}

/// Right-hand side seen by the recourse at the normalized point `v`:
/// `h - K [l + (u - l) * v]`.
pub fn apply_uncertainty(
    sys: &StackedSystem,
    dne: &DneBox,
    v: &[f64],
) -> Result<DVector<f64>, FormulationError> {
    if v.len() != sys.n_w() || dne.len() != sys.n_w() {
        return Err(FormulationError::DimensionMismatch(format!(
            "{} wind columns, box of {} and point of {}",
            sys.n_w(),
            dne.len(),
            v.len()
        )));
    }
    if let Some((index, &value)) = v
        .iter()
        .enumerate()
        .find(|(_, x)| !(0.0..=1.0).contains(*x))
    {
        return Err(FormulationError::OutsideUnitBox { index, value });
    }
    Ok(sys.rhs_at(&dne.realize(v)))
}
