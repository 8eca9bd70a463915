//! Best-bound branch and bound over the simplex kernel.
//!
//! Nodes are ordered by their relaxation bound, ties going to the node
//! created first. Branching picks the lowest-index fractional integer
//! variable and creates the down child before the up child, so node ids
//! and the whole search are reproducible.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::lp::{solve_lp_with, LinearProgram, LpConfig, LpError, LpStatus, Sense};

#[derive(Debug, Clone, PartialEq)]
pub struct MixedIntegerProgram {
    pub lp: LinearProgram,
    /// Indices of variables restricted to integer values.
    pub integers: Vec<usize>,
}

impl MixedIntegerProgram {
    pub fn new(lp: LinearProgram, mut integers: Vec<usize>) -> Self {
        integers.sort_unstable();
        integers.dedup();
        Self { lp, integers }
    }

    fn validate(&self) -> Result<(), MilpError> {
        self.lp.validate()?;
        for &j in &self.integers {
            if j >= self.lp.num_vars() {
                return Err(MilpError::InvalidInteger {
                    var: j,
                    reason: "index out of range",
                });
            }
            if !self.lp.lower[j].is_finite() || !self.lp.upper[j].is_finite() {
                return Err(MilpError::InvalidInteger {
                    var: j,
                    reason: "integer variables need finite bounds",
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpConfig {
    /// Absolute optimality gap.
    pub gap_tol: f64,
    pub integrality_tol: f64,
    pub node_limit: usize,
    pub lp: LpConfig,
}

impl Default for MilpConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            integrality_tol: 1e-6,
            node_limit: 200_000,
            lp: LpConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MipStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipSolution {
    pub status: MipStatus,
    pub objective: f64,
    /// Integer components are exact integers.
    pub primal: Vec<f64>,
    pub node_count: usize,
    pub best_bound: f64,
    /// Global bound after each node expansion, in the program's sense.
    pub bound_history: Vec<f64>,
}

impl MipSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == MipStatus::Optimal
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MilpError {
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("variable {var} cannot be integer: {reason}")]
    InvalidInteger { var: usize, reason: &'static str },
    #[error("the continuous relaxation is unbounded")]
    UnboundedRelaxation,
    #[error("node limit {limit} reached (incumbent {incumbent:?}, bound {best_bound})")]
    NodeLimit {
        limit: usize,
        incumbent: Option<f64>,
        best_bound: f64,
    },
}

struct Node {
    id: usize,
    /// Relaxation value in maximization orientation.
    score: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
    primal: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(&self.id))
    }
}

pub fn solve_milp(
    mip: &MixedIntegerProgram,
    config: &MilpConfig,
) -> Result<MipSolution, MilpError> {
    mip.validate()?;
    let orient = if mip.lp.sense == Sense::Maximize {
        1.0
    } else {
        -1.0
    };
    let mut search = Search {
        mip,
        config,
        orient,
        work: mip.lp.clone(),
        next_id: 0,
        incumbent: None,
    };

    let mut lower = mip.lp.lower.clone();
    let mut upper = mip.lp.upper.clone();
    for &j in &mip.integers {
        lower[j] = (lower[j] - config.integrality_tol).ceil();
        upper[j] = (upper[j] + config.integrality_tol).floor();
        if lower[j] > upper[j] {
            return Ok(search.finish_infeasible(0, Vec::new()));
        }
    }

    let mut heap = BinaryHeap::new();
    let mut history = Vec::new();
    let mut node_count = 0usize;
    if let Some(root) = search.evaluate(lower, upper, f64::INFINITY)? {
        heap.push(root);
    }
    node_count += 1;

    loop {
        let incumbent_score = search.incumbent.as_ref().map(|(s, _)| *s);
        let top = heap.peek().map(|n| n.score);
        let bound = match (top, incumbent_score) {
            (Some(t), Some(i)) => t.max(i),
            (Some(t), None) => t,
            (None, Some(i)) => i,
            (None, None) => f64::NEG_INFINITY,
        };
        history.push(orient * bound);
        let Some(node) = heap.pop() else { break };
        if let Some(inc) = incumbent_score {
            if node.score <= inc + config.gap_tol {
                break;
            }
        }
        if node_count >= config.node_limit {
            return Err(MilpError::NodeLimit {
                limit: config.node_limit,
                incumbent: incumbent_score.map(|s| orient * s),
                best_bound: orient * bound,
            });
        }
        let j = search
            .first_fractional(&node.primal)
            .expect("queued nodes carry fractional relaxations");
        let value = node.primal[j];

        let mut down_upper = node.upper.clone();
        down_upper[j] = value.floor();
        let down = search.evaluate(node.lower.clone(), down_upper, node.score)?;
        let mut up_lower = node.lower;
        up_lower[j] = value.ceil();
        let up = search.evaluate(up_lower, node.upper, node.score)?;
        node_count += 2;
        for child in [down, up].into_iter().flatten() {
            heap.push(child);
        }
    }

    match search.incumbent.take() {
        None => Ok(search.finish_infeasible(node_count, history)),
        Some((score, primal)) => {
            let last = history.last().map_or(score, |b| orient * b);
            let best_bound = last.max(score);
            Ok(MipSolution {
                status: MipStatus::Optimal,
                objective: orient * score,
                primal,
                node_count,
                best_bound: orient * best_bound,
                bound_history: history,
            })
        }
    }
}

struct Search<'a> {
    mip: &'a MixedIntegerProgram,
    config: &'a MilpConfig,
    orient: f64,
    work: LinearProgram,
    next_id: usize,
    incumbent: Option<(f64, Vec<f64>)>,
}

impl Search<'_> {
    fn finish_infeasible(&self, node_count: usize, bound_history: Vec<f64>) -> MipSolution {
        MipSolution {
            status: MipStatus::Infeasible,
            objective: f64::NAN,
            primal: Vec::new(),
            node_count,
            best_bound: f64::NAN,
            bound_history,
        }
    }

    fn first_fractional(&self, x: &[f64]) -> Option<usize> {
        self.mip
            .integers
            .iter()
            .copied()
            .find(|&j| (x[j] - x[j].round()).abs() > self.config.integrality_tol)
    }

    /// Solves the relaxation under the given bounds. Integral relaxations
    /// update the incumbent and return `None`; fractional ones that can
    /// still beat the incumbent come back as open nodes.
    fn evaluate(
        &mut self,
        lower: Vec<f64>,
        upper: Vec<f64>,
        parent: f64,
    ) -> Result<Option<Node>, MilpError> {
        self.work.lower.clone_from(&lower);
        self.work.upper.clone_from(&upper);
        let sol = solve_lp_with(&self.work, &self.config.lp)?;
        let id = self.next_id;
        self.next_id += 1;
        match sol.status {
            LpStatus::Infeasible => return Ok(None),
            LpStatus::Unbounded => return Err(MilpError::UnboundedRelaxation),
            LpStatus::Optimal => {}
        }
        let score = (self.orient * sol.objective).min(parent);
        if let Some((inc, _)) = &self.incumbent {
            if score <= inc + self.config.gap_tol {
                return Ok(None);
            }
        }
        if self.first_fractional(&sol.primal).is_some() {
            return Ok(Some(Node {
                id,
                score,
                lower,
                upper,
                primal: sol.primal,
            }));
        }
        self.accept(sol.primal, &lower, &upper)?;
        Ok(None)
    }

    /// Rounds the integer part exactly and re-optimizes the continuous part
    /// with the integers fixed.
    fn accept(&mut self, mut x: Vec<f64>, lower: &[f64], upper: &[f64]) -> Result<(), MilpError> {
        let mut exact = true;
        for &j in &self.mip.integers {
            let r = x[j].round();
            exact &= x[j] == r;
            x[j] = r;
        }
        if !exact {
            self.work.lower.copy_from_slice(lower);
            self.work.upper.copy_from_slice(upper);
            for &j in &self.mip.integers {
                self.work.lower[j] = x[j];
                self.work.upper[j] = x[j];
            }
            let polished = solve_lp_with(&self.work, &self.config.lp)?;
            if polished.is_optimal() {
                x = polished.primal;
                for &j in &self.mip.integers {
                    x[j] = x[j].round();
                }
            }
        }
        let score = self.orient * self.mip.lp.objective_value(&x);
        let better = match &self.incumbent {
            None => true,
            Some((inc, _)) => score > *inc,
        };
        if better {
            self.incumbent = Some((score, x));
        }
        Ok(())
    }
}
