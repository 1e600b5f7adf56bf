//! Candidate scoring and immune-route selection.
//!
//! A candidate's infection probability is its probe-failure fraction. Its
//! fitness rewards a hop count close to the longest candidate and a replier
//! that has not been flooding the origin with replies:
//!
//! ```text
//! fitness = hops / max_hops + max_iterations / iterations
//! score   = (1 - p_bh) * fitness
//! ```
//!
//! Routes with `p_bh > 0.5` are rejected outright; the best remaining score wins.

use serde::Serialize;
use thiserror::Error;

use crate::defense::probe::PROBES_PER_ROUTE;
use crate::packet::{NodeId, RouteRecord};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoringError {
    #[error("probing incomplete: {successes} successes + {failures} failures of {expected}")]
    ProbingIncomplete { successes: u8, failures: u8, expected: u8 },
    #[error("fitness argument {name}={value} must be >= 1")]
    NonPositive { name: &'static str, value: u32 },
    #[error("{name} ({value}) exceeds its maximum ({max})")]
    AboveMaximum { name: &'static str, value: u32, max: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RouteCandidate {
    pub route: RouteRecord,
    pub replier: NodeId,
    pub hop_count: u32,
    pub replier_rrep_iterations: u32,
    pub probe_successes: u8,
    pub probe_failures: u8,
    pub p_bh: f64,
    pub fitness: f64,
    pub secure_score: f64,
}

impl RouteCandidate {
    pub fn new(route: RouteRecord, replier: NodeId, replier_rrep_iterations: u32) -> Self {
        RouteCandidate {
            hop_count: route.hop_count() as u32,
            route,
            replier,
            replier_rrep_iterations: replier_rrep_iterations.max(1),
            probe_successes: 0,
            probe_failures: 0,
            p_bh: 0.0,
            fitness: 0.0,
            secure_score: 0.0,
        }
    }

    pub fn probing_complete(&self) -> bool {
        self.probe_successes + self.probe_failures == PROBES_PER_ROUTE
    }
}

pub fn infection_probability(candidate: &RouteCandidate) -> Result<f64, ScoringError> {
    if !candidate.probing_complete() {
        return Err(ScoringError::ProbingIncomplete {
            successes: candidate.probe_successes,
            failures: candidate.probe_failures,
            expected: PROBES_PER_ROUTE,
        });
    }
    Ok(f64::from(candidate.probe_failures) / f64::from(PROBES_PER_ROUTE))
}

pub fn route_fitness(hop_count: u32, max_hop_count: u32, iteration: u32, max_iteration: u32) -> Result<f64, ScoringError> {
    for (name, value) in [
        ("hop_count", hop_count),
        ("max_hop_count", max_hop_count),
        ("iteration", iteration),
        ("max_iteration", max_iteration),
    ] {
        if value == 0 {
            return Err(ScoringError::NonPositive { name, value });
        }
    }
    if hop_count > max_hop_count {
        return Err(ScoringError::AboveMaximum {
            name: "hop_count",
            value: hop_count,
            max: max_hop_count,
        });
    }
    if iteration > max_iteration {
        return Err(ScoringError::AboveMaximum {
            name: "iteration",
            value: iteration,
            max: max_iteration,
        });
    }
    Ok(f64::from(hop_count) / f64::from(max_hop_count) + f64::from(max_iteration) / f64::from(iteration))
}

pub fn secure_score(p_bh: f64, fitness: f64) -> f64 {
    (1.0 - p_bh) * fitness
}

/// Fills `p_bh`, `fitness` and `secure_score` for every candidate, taking the
/// maxima over the whole set.
pub fn score_candidates(candidates: &mut [RouteCandidate]) -> Result<(), ScoringError> {
    let max_hops = candidates.iter().map(|c| c.hop_count).max().unwrap_or(1);
    let max_iter = candidates
        .iter()
        .map(|c| c.replier_rrep_iterations)
        .max()
        .unwrap_or(1);
    for c in candidates.iter_mut() {
        c.p_bh = infection_probability(c)?;
        c.fitness = route_fitness(c.hop_count, max_hops, c.replier_rrep_iterations, max_iter)?;
        c.secure_score = secure_score(c.p_bh, c.fitness);
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Selection {
    pub chosen: Option<usize>,
    /// Indices rejected for `p_bh` above the threshold.
    pub rejected: Vec<usize>,
    /// Indices skipped because the route contains an isolated node.
    pub excluded: Vec<usize>,
}

/// Relative tolerance under which two scores count as tied.
const SCORE_TIE_TOLERANCE: f64 = 1e-9;

/// Rejects `p_bh > reject_above`, skips routes through isolated nodes, then
/// takes the highest score. Ties go to fewer hops, then the lexicographically
/// smallest route.
pub fn select_route(
    candidates: &[RouteCandidate],
    reject_above: f64,
    is_isolated: impl Fn(NodeId) -> bool,
) -> Selection {
    let mut sel = Selection::default();
    let mut survivors = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if c.p_bh > reject_above {
            sel.rejected.push(i);
        } else if c.route.nodes().iter().any(|&n| is_isolated(n)) {
            sel.excluded.push(i);
        } else {
            survivors.push(i);
        }
    }
    let best = survivors
        .iter()
        .map(|&i| candidates[i].secure_score)
        .fold(f64::NEG_INFINITY, f64::max);
    let floor = best - best.abs() * SCORE_TIE_TOLERANCE;
    sel.chosen = survivors
        .into_iter()
        .filter(|&i| candidates[i].secure_score >= floor)
        .min_by(|&a, &b| {
            let (ca, cb) = (&candidates[a], &candidates[b]);
            ca.hop_count.cmp(&cb.hop_count).then_with(|| ca.route.cmp(&cb.route))
        });
    sel
}

/// Detector-space encoding of a scored candidate: hop-count ratio, reply rate
/// (saturating at `iteration_norm`) and probe-failure rate.
pub fn feature_vector(candidate: &RouteCandidate, max_hop_count: u32, iteration_norm: u32) -> [f64; 3] {
    [
        f64::from(candidate.hop_count) / f64::from(max_hop_count.max(1)),
        (f64::from(candidate.replier_rrep_iterations) / f64::from(iteration_norm.max(1))).min(1.0),
        f64::from(candidate.probe_failures) / f64::from(PROBES_PER_ROUTE),
    ]
}
