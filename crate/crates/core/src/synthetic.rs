//! Seeded random test systems.
//!
//! Cases are built around a proportional dispatch at forecast wind that
//! respects every unit, ramp and line limit, so the forecast is always
//! feasible and the dispatch problem solvable.

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ptdf::compute_ptdf;
use crate::system::{
    Bus, BusId, BusLoad, Commitment, FarmId, Line, LineId, SystemCase, ThermalUnit, TimeGrid,
    UnitId, WindFarm,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub buses: usize,
    /// Units that are committed throughout.
    pub units: usize,
    pub quick_start: usize,
    pub farms: usize,
    pub periods: usize,
    /// Lines given little headroom over the reference flows.
    pub tight_lines: usize,
    pub seed: u64,
}

pub fn generate(spec: &SyntheticSpec) -> SystemCase {
    assert!(spec.buses >= 2 && spec.units >= 1 && spec.periods >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let nb = spec.buses;
    let n_t = spec.periods;

    let buses = (0..nb)
        .map(|b| Bus {
            id: BusId(b as u32 + 1),
            is_slack: b == 0,
        })
        .collect();

    let mut ends: Vec<(usize, usize)> = (0..nb - 1).map(|b| (b, b + 1)).collect();
    if nb > 2 {
        ends.push((nb - 1, 0));
    }
    for _ in 0..nb / 3 {
        let a = rng.gen_range(0..nb);
        let b = rng.gen_range(0..nb);
        if a != b
            && !ends
                .iter()
                .any(|&(f, t)| (f, t) == (a, b) || (f, t) == (b, a))
        {
            ends.push((a, b));
        }
    }

    let mut load_buses: Vec<usize> = (0..nb).filter(|_| rng.gen_bool(0.6)).collect();
    if load_buses.is_empty() {
        load_buses.push(nb - 1);
    }
    let mut profile = vec![1.0];
    for _ in 1..n_t {
        let last = *profile.last().unwrap();
        profile.push(last * rng.gen_range(0.97..1.03));
    }
    let load: Vec<BusLoad> = load_buses
        .iter()
        .map(|&b| {
            let base: f64 = rng.gen_range(10.0..40.0);
            BusLoad {
                bus: BusId(b as u32 + 1),
                mw: profile.iter().map(|p| round2(base * p)).collect(),
            }
        })
        .collect();
    let total_load: Vec<f64> = (0..n_t)
        .map(|t| load.iter().map(|l| l.mw[t]).sum())
        .collect();
    let peak = total_load.iter().cloned().fold(0.0, f64::max);

    let farms: Vec<WindFarm> = (0..spec.farms)
        .map(|j| {
            let share: f64 = rng.gen_range(0.1..0.2);
            let forecast: Vec<f64> = (0..n_t)
                .map(|_| round2(peak * share * rng.gen_range(0.8..1.2)))
                .collect();
            let w_max = forecast.iter().map(|f| round2(f * 2.0)).collect();
            WindFarm {
                id: FarmId(j as u32 + 1),
                bus: BusId(rng.gen_range(0..nb) as u32 + 1),
                w_min: vec![0.0; n_t],
                w_max,
                forecast,
            }
        })
        .collect();
    let net: Vec<f64> = (0..n_t)
        .map(|t| total_load[t] - farms.iter().map(|f| f.forecast[t]).sum::<f64>())
        .collect();

    // Committed fleet sized at 1.6x peak load with p_min at a quarter of p_max.
    let shares: Vec<f64> = (0..spec.units).map(|_| rng.gen_range(0.5..1.5)).collect();
    let share_sum: f64 = shares.iter().sum();
    let p_max: Vec<f64> = shares
        .iter()
        .map(|s| round2(1.6 * peak * s / share_sum))
        .collect();
    let p_min: Vec<f64> = p_max.iter().map(|p| round2(0.25 * p)).collect();
    let (lo, hi) = (p_min.iter().sum::<f64>(), p_max.iter().sum::<f64>());
    let alpha: Vec<f64> = net
        .iter()
        .map(|n| ((n - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect();
    let swing = alpha
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max);
    let dispatch = |g: usize, t: usize| p_min[g] + alpha[t] * (p_max[g] - p_min[g]);

    let mut units = Vec::new();
    for g in 0..spec.units {
        let needed = swing * (p_max[g] - p_min[g]) * 1.2;
        units.push(ThermalUnit {
            id: UnitId(g as u32 + 1),
            bus: BusId(rng.gen_range(0..nb) as u32 + 1),
            p_min: p_min[g],
            p_max: p_max[g],
            ramp_rate: round2((p_max[g] * rng.gen_range(0.08..0.2)).max(needed)),
            marginal_cost: round2(rng.gen_range(15.0..40.0)),
            is_quick_start: false,
            min_up: None,
            min_down: None,
            startup_limit: None,
            initial_status: Commitment::On,
            initial_output: round2(dispatch(g, 0)),
        });
    }
    for q in 0..spec.quick_start {
        let cap = round2(peak * rng.gen_range(0.05..0.1));
        units.push(ThermalUnit {
            id: UnitId((spec.units + q) as u32 + 1),
            bus: BusId(rng.gen_range(0..nb) as u32 + 1),
            p_min: round2(0.3 * cap),
            p_max: cap,
            ramp_rate: cap,
            marginal_cost: round2(rng.gen_range(60.0..80.0)),
            is_quick_start: true,
            min_up: Some(rng.gen_range(1..=2)),
            min_down: Some(rng.gen_range(1..=2)),
            startup_limit: Some(round2(0.8 * cap)),
            initial_status: Commitment::Off,
            initial_output: 0.0,
        });
    }
    units.shuffle(&mut rng);

    let mut case = SystemCase {
        buses,
        lines: ends
            .iter()
            .enumerate()
            .map(|(l, &(f, t))| Line {
                id: LineId(l as u32 + 1),
                from_bus: BusId(f as u32 + 1),
                to_bus: BusId(t as u32 + 1),
                reactance: round2(rng.gen_range(0.05..0.3)),
                capacity: 0.0,
            })
            .collect(),
        units,
        wind_farms: farms,
        load,
        time_grid: TimeGrid {
            n_periods: n_t,
            period_length: 15.0,
        },
    };

    // Capacities leave headroom over the flows of the reference dispatch;
    // a few corridors are tight, the rest can absorb any wind swing.
    let ptdf = compute_ptdf(&case).expect("ring network is connected");
    let bus_load = case.bus_load();
    let mut peak_flow = vec![0.0f64; case.lines.len()];
    for t in 0..n_t {
        let mut inj: Vec<f64> = (0..nb).map(|b| -bus_load[b][t]).collect();
        for unit in &case.units {
            if !unit.is_quick_start {
                let g = unit.id.0 as usize - 1;
                inj[case.bus_index(unit.bus).unwrap()] += dispatch(g, t);
            }
        }
        for farm in &case.wind_farms {
            inj[case.bus_index(farm.bus).unwrap()] += farm.forecast[t];
        }
        for (l, f) in ptdf.flows(&inj).into_iter().enumerate() {
            peak_flow[l] = peak_flow[l].max(f.abs());
        }
    }
    let swing: f64 = case
        .wind_farms
        .iter()
        .map(|f| f.w_max.iter().cloned().fold(0.0, f64::max))
        .sum();
    let mut order: Vec<usize> = (0..case.lines.len()).collect();
    order.shuffle(&mut rng);
    let tight = &order[..spec.tight_lines.min(order.len())];
    for (l, (line, flow)) in case.lines.iter_mut().zip(peak_flow).enumerate() {
        let headroom = if tight.contains(&l) {
            rng.gen_range(1.1..1.5) * flow
        } else {
            1.2 * (flow + swing)
        };
        line.capacity = (headroom + 5.0).ceil();
    }
    case.validate().expect("generated case is valid");
    case
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
