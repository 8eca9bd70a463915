//! DC injection shift factors.

use std::collections::VecDeque;

use nalgebra::DMatrix;

use crate::system::{CaseError, SystemCase};

/// Lines x buses; entry `(l, b)` is the MW flow on line `l` (from -> to)
/// per MW injected at bus `b` and withdrawn at the slack bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Ptdf {
    pub matrix: DMatrix<f64>,
}

impl Ptdf {
    pub fn get(&self, line: usize, bus: usize) -> f64 {
        self.matrix[(line, bus)]
    }

    /// Line flows for a nodal injection vector indexed by bus position.
    pub fn flows(&self, injection: &[f64]) -> Vec<f64> {
        (0..self.matrix.nrows())
            .map(|l| {
                injection
                    .iter()
                    .enumerate()
                    .map(|(b, p)| self.matrix[(l, b)] * p)
                    .sum()
            })
            .collect()
    }
}

pub fn compute_ptdf(case: &SystemCase) -> Result<Ptdf, CaseError> {
    let nb = case.buses.len();
    let slack = case.slack_index();

    let adj = case.adjacency();
    let mut seen = vec![false; nb];
    let mut queue = VecDeque::from([slack]);
    seen[slack] = true;
    while let Some(b) = queue.pop_front() {
        for &k in adj.get(&b).into_iter().flatten() {
            if !seen[k] {
                seen[k] = true;
                queue.push_back(k);
            }
        }
    }
    if let Some(b) = seen.iter().position(|s| !s) {
        return Err(CaseError::Disconnected(case.buses[b].id));
    }

    let ends: Vec<(usize, usize)> = case
        .lines
        .iter()
        .map(|l| {
            (
                case.bus_index(l.from_bus).unwrap(),
                case.bus_index(l.to_bus).unwrap(),
            )
        })
        .collect();

    // Reduced susceptance matrix without the slack row and column.
    let reduced = |b: usize| if b < slack { b } else { b - 1 };
    let mut bbus = DMatrix::<f64>::zeros(nb - 1, nb - 1);
    for (line, &(f, t)) in case.lines.iter().zip(&ends) {
        let y = 1.0 / line.reactance;
        if f != slack {
            bbus[(reduced(f), reduced(f))] += y;
        }
        if t != slack {
            bbus[(reduced(t), reduced(t))] += y;
        }
        if f != slack && t != slack {
            bbus[(reduced(f), reduced(t))] -= y;
            bbus[(reduced(t), reduced(f))] -= y;
        }
    }
    let theta = if nb > 1 {
        bbus.lu().try_inverse().ok_or(CaseError::Singular)?
    } else {
        DMatrix::zeros(0, 0)
    };

    let angle = |bus: usize, inj: usize| -> f64 {
        if bus == slack || inj == slack {
            0.0
        } else {
            theta[(reduced(bus), reduced(inj))]
        }
    };
    let matrix = DMatrix::from_fn(case.lines.len(), nb, |l, b| {
        let (f, t) = ends[l];
        (angle(f, b) - angle(t, b)) / case.lines[l].reactance
    });
    Ok(Ptdf { matrix })
}
