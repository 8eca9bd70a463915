//! Prints a seeded synthetic case as JSON.
//!
//! Usage: `synthetic_case BUSES UNITS QSUS FARMS PERIODS TIGHT_LINES SEED`

use dne_core::synthetic::{generate, SyntheticSpec};

fn main() {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse().unwrap_or_else(|_| panic!("not a number: {a}")))
        .collect();
    let [buses, units, quick_start, farms, periods, tight_lines, seed] = args[..] else {
        eprintln!("usage: synthetic_case BUSES UNITS QSUS FARMS PERIODS TIGHT_LINES SEED");
        std::process::exit(1);
    };
    let spec = SyntheticSpec {
        buses,
        units,
        quick_start,
        farms,
        periods,
        tight_lines,
        seed: seed as u64,
    };
    println!("{}", generate(&spec).to_json());
}
