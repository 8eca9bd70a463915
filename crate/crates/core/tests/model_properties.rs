use dne_core::ded::{sigma_from_lmps, solve_ded};
use dne_core::formulation::{
    apply_uncertainty, build_coupling_blocks, build_period_blocks, build_system, stack_system,
    DneBox, FormulationOptions, Layout, QsuSelection,
};
use dne_core::ptdf::compute_ptdf;
use dne_core::synthetic::{generate, SyntheticSpec};
use dne_core::system::{load_case, SystemCase};
use proptest::prelude::*;

fn case(seed: u64, buses: usize, periods: usize) -> SystemCase {
    generate(&SyntheticSpec {
        buses,
        units: 3,
        quick_start: 1,
        farms: 2,
        periods,
        tight_lines: 1,
        seed,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn case_json_round_trips(seed in 0u64..1000, buses in 2usize..12, periods in 1usize..5) {
        let c = case(seed, buses, periods);
        prop_assert_eq!(load_case(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn ptdf_flows_conserve_power(seed in 0u64..1000, buses in 3usize..12) {
        let c = case(seed, buses, 1);
        let ptdf = compute_ptdf(&c).unwrap();
        let slack = c.slack_index();
        let mut inj: Vec<f64> = (0..buses).map(|b| ((seed as usize * 7 + b * 13) % 11) as f64 - 5.0).collect();
        inj[slack] -= inj.iter().sum::<f64>();
        let flows = ptdf.flows(&inj);
        for b in 0..buses {
            let mut net = inj[b];
            for (l, line) in c.lines.iter().enumerate() {
                if c.bus_index(line.from_bus) == Some(b) {
                    net -= flows[l];
                }
                if c.bus_index(line.to_bus) == Some(b) {
                    net += flows[l];
                }
            }
            prop_assert!(net.abs() <= 1e-9, "bus {} imbalance {}", b, net);
        }
        for l in 0..c.lines.len() {
            prop_assert_eq!(ptdf.get(l, slack), 0.0);
        }
    }

    #[test]
    fn apply_uncertainty_is_affine(seed in 0u64..1000, alpha in 0.0f64..=1.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let c = case(seed, 5, 2);
        let ptdf = compute_ptdf(&c).unwrap();
        let ded = solve_ded(&c).unwrap();
        let sigma = sigma_from_lmps(&ded, &c);
        let options = FormulationOptions { recourse_qsus: QsuSelection::All, screen_lines: false };
        let sys = build_system(&c, &ptdf, &ded.ddp, &sigma, &options).unwrap();
        let dne = DneBox::capacity(&c, &sys.w_keys);
        let n = sys.n_w();
        let v1: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { a } else { b }).collect();
        let v2: Vec<f64> = (0..n).map(|j| if j % 2 == 0 { b } else { 1.0 - a }).collect();
        let mix: Vec<f64> = v1.iter().zip(&v2).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
        let r1 = apply_uncertainty(&sys, &dne, &v1).unwrap();
        let r2 = apply_uncertainty(&sys, &dne, &v2).unwrap();
        let rm = apply_uncertainty(&sys, &dne, &mix).unwrap();
        for i in 0..sys.n_rows() {
            let expect = alpha * r1[i] + (1.0 - alpha) * r2[i];
            prop_assert!((rm[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "row {}", i);
        }
    }

    #[test]
    fn dispatch_respects_limits_and_weights_normalize(seed in 0u64..1000, periods in 1usize..4) {
        let c = case(seed, 6, periods);
        let ded = solve_ded(&c).unwrap();
        for t in 0..periods {
            let supply: f64 = ded.ddp.iter().map(|p| p[t]).sum::<f64>()
                + c.wind_farms.iter().map(|f| f.forecast[t]).sum::<f64>();
            prop_assert!((supply - c.total_load(t)).abs() <= 1e-6);
            for (g, unit) in c.units.iter().enumerate() {
                let p = ded.ddp[g][t];
                let prev = if t == 0 { unit.initial_output } else { ded.ddp[g][t - 1] };
                if unit.initial_status.is_on() {
                    prop_assert!(p >= unit.p_min - 1e-6 && p <= unit.p_max + 1e-6);
                    prop_assert!((p - prev).abs() <= unit.ramp_rate + 1e-6);
                } else {
                    prop_assert!(p.abs() <= 1e-9);
                }
            }
        }
        let cost: f64 = c.units.iter().enumerate()
            .map(|(g, u)| u.marginal_cost * ded.ddp[g].iter().sum::<f64>())
            .sum();
        prop_assert!((cost - ded.total_cost).abs() <= 1e-6 * (1.0 + cost));
        let sigma = sigma_from_lmps(&ded, &c);
        prop_assert!(sigma.iter().flatten().all(|&s| s >= 0.0));
        prop_assert!((sigma.iter().flatten().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn stacked_residual_concatenates_block_residuals(seed in 0u64..1000, periods in 1usize..4, point in 0u64..1000) {
        let c = case(seed, 5, periods);
        let ptdf = compute_ptdf(&c).unwrap();
        let ded = solve_ded(&c).unwrap();
        let options = FormulationOptions { recourse_qsus: QsuSelection::All, screen_lines: false };
        let layout = Layout::new(&c, &options).unwrap();
        let blocks: Vec<_> =
            (0..periods).map(|t| build_period_blocks(&c, &ptdf, &ded.ddp, t, &options).unwrap()).collect();
        let coupling = build_coupling_blocks(&c, &options).unwrap();
        let sigma = vec![vec![0.5; c.wind_farms.len()]; periods];
        let sys = stack_system(&blocks, &coupling, &sigma, &layout).unwrap();
        prop_assert_eq!(sys.n_rows(), blocks.iter().map(|b| b.labels.len()).sum::<usize>() + coupling.labels.len());
        prop_assert_eq!(sys.n_w(), c.wind_farms.len() * periods);

        let (nx, nz, nw) = (layout.n_x(), layout.n_z(), layout.n_w());
        let val = |k: usize, scale: f64| ((point as usize * 31 + k * 17) % 23) as f64 / 23.0 * scale;
        let x: Vec<Vec<f64>> = (0..periods).map(|t| (0..nx).map(|g| val(t * nx + g, 80.0)).collect()).collect();
        let z: Vec<Vec<f64>> = (0..periods).map(|t| (0..nz).map(|q| (val(t * nz + q + 99, 2.0) > 1.0) as u8 as f64).collect()).collect();
        let w: Vec<Vec<f64>> = (0..periods).map(|t| (0..nw).map(|j| val(t * nw + j + 7, 40.0)).collect()).collect();
        let stacked = sys.residual(&x.concat(), &z.concat(), &w.concat());
        let mut expected: Vec<f64> = Vec::new();
        for (t, b) in blocks.iter().enumerate() {
            expected.extend(b.residual(&x[t], &z[t], &w[t]).iter());
        }
        expected.extend(coupling.residual(&x, &z).iter());
        prop_assert_eq!(stacked.len(), expected.len());
        for (i, (a, b)) in stacked.iter().zip(&expected).enumerate() {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()), "row {} ({}): {} vs {}", i, sys.rows[i], a, b);
        }
        // Wind enters only the decoupled rows of its own period.
        for (i, row) in sys.rows.iter().enumerate() {
            for (j, key) in sys.w_keys.iter().enumerate() {
                if sys.wind[(i, j)] != 0.0 {
                    prop_assert_eq!(row.period, key.period);
                }
            }
        }
    }
}

#[test]
fn uncongested_prices_are_uniform() {
    // Lines sized for any flow, so every bus sees the marginal unit's cost.
    for seed in 0..10 {
        let mut c = case(seed, 6, 2);
        for line in &mut c.lines {
            line.capacity = 1e5;
        }
        let ded = solve_ded(&c).unwrap();
        for t in 0..2 {
            let first = ded.lmp[0][t];
            for bus in &ded.lmp {
                assert!((bus[t] - first).abs() <= 1e-8, "seed {seed}");
            }
        }
    }
}
