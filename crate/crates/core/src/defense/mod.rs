//! Route vetting at the source: collect every reply in a window, probe each
//! candidate route, score and select, and keep a suspicion table fed by probe
//! results, detector verdicts and neighbor alerts.

pub mod clonal;
pub mod collect;
pub mod probe;
pub mod scoring;
pub mod suspicion;

use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use clonal::{affinity, train_detectors, Detector, DetectorError, DetectorParams, DetectorSet, Pattern, Verdict};
pub use collect::{collect_rreps, CandidateSet, Offer, ReplyLog};
pub use probe::{probe_timeout, ProbeSession, ProbeStep, PROBES_PER_ROUTE};
pub use scoring::{
    feature_vector, infection_probability, route_fitness, score_candidates, secure_score, select_route,
    RouteCandidate, ScoringError, Selection,
};
pub use suspicion::{Evidence, SuspicionTable, Thresholds};

/// Tunables for the defense pipeline. Times are in seconds; the defaults are
/// sized to a 2-3 ms per-hop link with at least 2.5x margin on a probe round
/// trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DefenseParams {
    pub rrep_window: f64,
    pub probe_timeout_per_hop: f64,
    pub probe_timeout_floor: f64,
    pub iteration_window: f64,
    /// Replies per window at which the reply-rate feature saturates.
    pub iteration_norm: u32,
    pub reject_threshold: f64,
    pub direct_isolation: u32,
    pub alert_isolation: u32,
    /// Re-broadcast alerts network-wide instead of one hop.
    pub alert_flood: bool,
    /// Distinct self patterns kept for detector training.
    pub self_pattern_cap: usize,
    pub detectors: DetectorParams,
}

impl Default for DefenseParams {
    fn default() -> Self {
        DefenseParams {
            rrep_window: 0.03,
            probe_timeout_per_hop: 0.015,
            probe_timeout_floor: 0.03,
            iteration_window: 10.0,
            iteration_norm: 10,
            reject_threshold: 0.5,
            direct_isolation: 1,
            alert_isolation: 2,
            alert_flood: false,
            self_pattern_cap: 32,
            detectors: DetectorParams::default(),
        }
    }
}

impl DefenseParams {
    pub fn window(&self) -> Duration {
        Duration::from_secs_f64(self.rrep_window)
    }

    pub fn iteration_span(&self) -> Duration {
        Duration::from_secs_f64(self.iteration_window)
    }

    pub fn probe_timeout(&self, hop_count: u32) -> Duration {
        probe_timeout(
            hop_count,
            Duration::from_secs_f64(self.probe_timeout_per_hop),
            Duration::from_secs_f64(self.probe_timeout_floor),
        )
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds {
            direct: self.direct_isolation,
            hearsay: self.alert_isolation,
        }
    }
}
