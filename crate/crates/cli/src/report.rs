//! Result files written by the subcommands and the band CSVs derived from
//! them.

use dne_core::ded::DedResult;
use dne_core::feasibility::{ScenarioCheck, ViolatingTrajectory};
use dne_core::nccg::DneSolution;
use dne_core::system::FarmId;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FarmLimit {
    pub farm: FarmId,
    pub lower: f64,
    pub upper: f64,
    pub forecast: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodLimits {
    /// One-based.
    pub period: usize,
    pub farms: Vec<FarmLimit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Report {
    Solve {
        case_label: String,
        qsu: String,
        objective: f64,
        limits: Vec<PeriodLimits>,
        solution: DneSolution,
    },
    Single {
        case_label: String,
        qsu: String,
        limits: Vec<PeriodLimits>,
        solutions: Vec<DneSolution>,
    },
    Compare {
        case_label: String,
        qsu: String,
        multi: DneSolution,
        singles: Vec<DneSolution>,
        trajectory: Option<ViolatingTrajectory>,
    },
    Ded {
        case_label: String,
        dispatch: DedResult,
    },
    Check {
        case_label: String,
        qsu: String,
        check: ScenarioCheck,
    },
}

pub fn limits(solutions: &[&DneSolution]) -> Vec<PeriodLimits> {
    let mut out: Vec<PeriodLimits> = Vec::new();
    for sol in solutions {
        for (j, key) in sol.w_keys.iter().enumerate() {
            let entry = FarmLimit {
                farm: key.farm,
                lower: sol.dne_box.lower[j],
                upper: sol.dne_box.upper[j],
                forecast: sol.dne_box.forecast[j],
                sigma: sol.sigma[j],
            };
            match out.iter_mut().find(|p| p.period == key.period + 1) {
                Some(p) => p.farms.push(entry),
                None => out.push(PeriodLimits {
                    period: key.period + 1,
                    farms: vec![entry],
                }),
            }
        }
    }
    out.sort_by_key(|p| p.period);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlotKind {
    Bands,
    Comparison,
}

#[derive(Debug, Clone, PartialEq)]
struct Row {
    period: usize,
    case_label: String,
    lower: f64,
    upper: f64,
    forecast: f64,
    single: Option<(f64, f64, Option<f64>)>,
}

/// System-level totals per period. Bands accept `solve` and `single`
/// reports; comparison needs `compare` reports.
pub fn plot_csv(reports: &[Report], kind: PlotKind) -> Result<String, String> {
    let mut rows = Vec::new();
    for report in reports {
        match (report, kind) {
            (
                Report::Solve {
                    case_label,
                    solution,
                    ..
                },
                PlotKind::Bands,
            ) => {
                rows.extend(band_rows(case_label, &[solution]));
            }
            (
                Report::Single {
                    case_label,
                    solutions,
                    ..
                },
                PlotKind::Bands,
            ) => {
                rows.extend(band_rows(case_label, &solutions.iter().collect::<Vec<_>>()));
            }
            (
                Report::Compare {
                    case_label,
                    multi,
                    singles,
                    trajectory,
                    ..
                },
                PlotKind::Comparison,
            ) => {
                for mut row in band_rows(case_label, &[multi]) {
                    let t = row.period - 1;
                    let single = singles.iter().find(|s| s.periods == [t]).ok_or_else(|| {
                        format!(
                            "compare report lacks the single-period box for period {}",
                            t + 1
                        )
                    })?;
                    let (sl, su, _) = single.period_totals(t);
                    let traj = trajectory.as_ref().map(|v| v.trajectory.mw[t].iter().sum());
                    row.single = Some((sl, su, traj));
                    rows.push(row);
                }
            }
            (other, _) => {
                let found = match other {
                    Report::Solve { .. } => "solve",
                    Report::Single { .. } => "single",
                    Report::Compare { .. } => "compare",
                    Report::Ded { .. } => "ded",
                    Report::Check { .. } => "check",
                };
                return Err(
                    format!("{kind:?} plot cannot be drawn from a {found} report").to_lowercase(),
                );
            }
        }
    }
    rows.sort_by(|a, b| (&a.case_label, a.period).cmp(&(&b.case_label, b.period)));

    let mut header = vec![
        "period",
        "case_label",
        "total_lower",
        "total_upper",
        "total_forecast",
    ];
    if kind == PlotKind::Comparison {
        header.extend(["single_lower", "single_upper", "trajectory"]);
    }
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(&header).map_err(|e| e.to_string())?;
    for row in rows {
        let mut record = vec![
            row.period.to_string(),
            row.case_label.clone(),
            mw(row.lower),
            mw(row.upper),
            mw(row.forecast),
        ];
        if let Some((sl, su, traj)) = row.single {
            record.extend([mw(sl), mw(su), traj.map(mw).unwrap_or_default()]);
        }
        out.write_record(&record).map_err(|e| e.to_string())?;
    }
    String::from_utf8(out.into_inner().map_err(|e| e.to_string())?).map_err(|e| e.to_string())
}

fn band_rows(case_label: &str, solutions: &[&DneSolution]) -> Vec<Row> {
    let mut rows = Vec::new();
    for sol in solutions {
        for &t in &sol.periods {
            let (lower, upper, forecast) = sol.period_totals(t);
            rows.push(Row {
                period: t + 1,
                case_label: case_label.to_string(),
                lower,
                upper,
                forecast,
                single: None,
            });
        }
    }
    rows
}

fn mw(x: f64) -> String {
    // Avoid printing -0.000000.
    let s = format!("{x:.6}");
    if s.trim_start_matches('-')
        .chars()
        .all(|c| c == '0' || c == '.')
    {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}
