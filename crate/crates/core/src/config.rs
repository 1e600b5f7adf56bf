//! Scenario configuration: TOML with one section per subsystem. Every key is
//! optional; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AttackMode;
use crate::defense::DefenseParams;
use crate::metrics::LossAccounting;
use crate::net::{Area, LinkModel, Position};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DsrBaseline,
    DsrUnderAttack,
    #[default]
    AisDsrUnderAttack,
    AisDsrClean,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::DsrBaseline,
        Variant::DsrUnderAttack,
        Variant::AisDsrUnderAttack,
        Variant::AisDsrClean,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::DsrBaseline => "dsr-baseline",
            Variant::DsrUnderAttack => "dsr-under-attack",
            Variant::AisDsrUnderAttack => "ais-dsr-under-attack",
            Variant::AisDsrClean => "ais-dsr-clean",
        }
    }

    pub fn defense_enabled(self) -> bool {
        matches!(self, Variant::AisDsrUnderAttack | Variant::AisDsrClean)
    }

    pub fn has_attackers(self) -> bool {
        matches!(self, Variant::DsrUnderAttack | Variant::AisDsrUnderAttack)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.label() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Variant::ALL.iter().map(|v| v.label()).collect();
                format!("unknown variant `{s}`, expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub node_count: usize,
    pub width: f64,
    pub height: f64,
    pub range: f64,
    pub per_hop_latency: f64,
    pub latency_jitter: f64,
    pub loss_prob: f64,
    /// Per-node cap on transmissions in the air; absent means unbounded.
    pub queue_limit: Option<usize>,
    /// Fixed node placement; implies a static network.
    pub positions: Option<Vec<[f64; 2]>>,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            node_count: 100,
            width: 1000.0,
            height: 1000.0,
            range: 250.0,
            per_hop_latency: 0.002,
            latency_jitter: 0.001,
            loss_prob: 0.0,
            queue_limit: None,
            positions: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilityConfig {
    pub pause_time: f64,
    pub speed_min: f64,
    pub speed_max: f64,
}

impl Default for MobilityConfig {
    fn default() -> Self {
        MobilityConfig {
            pause_time: 0.0,
            speed_min: 1.0,
            speed_max: 20.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrafficConfig {
    pub flows: usize,
    /// Packets per second per flow.
    pub rate: f64,
    pub payload: u32,
    /// Earliest flow start.
    pub start: f64,
    /// Each flow starts uniformly within `[start, start + start_jitter)`.
    pub start_jitter: f64,
    /// Last generation time; defaults to the run duration.
    pub stop: Option<f64>,
    /// Explicit `[source, destination]` pairs, replacing random selection.
    pub pairs: Option<Vec<[u32; 2]>>,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        TrafficConfig {
            flows: 10,
            rate: 4.0,
            payload: 512,
            start: 0.0,
            start_jitter: 1.0,
            stop: None,
            pairs: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoutingConfig {
    pub send_buffer: usize,
    pub discovery_timeout: f64,
    pub max_retries: u32,
    /// Let intermediate nodes answer from their route cache.
    pub cached_replies: bool,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            send_buffer: 64,
            discovery_timeout: 1.0,
            max_retries: 2,
            cached_replies: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub count: usize,
    pub mode: AttackMode,
    pub reply_delay: f64,
    /// Explicit attacker ids, replacing random selection.
    pub ids: Option<Vec<u32>>,
    /// Allow attackers to be flow destinations.
    pub allow_destinations: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            count: 5,
            mode: AttackMode::Cooperative,
            reply_delay: 0.0,
            ids: None,
            allow_destinations: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub accounting: LossAccounting,
    /// Seconds between ledger snapshots; absent disables them.
    pub snapshot_interval: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub pause_times: Vec<f64>,
    pub seeds: u32,
    pub variants: Vec<Variant>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            pause_times: vec![0.0, 40.0, 80.0, 120.0, 160.0, 200.0],
            seeds: 10,
            variants: Variant::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub variant: Variant,
    /// Simulated seconds.
    pub duration: f64,
    pub network: NetworkConfig,
    pub mobility: MobilityConfig,
    pub traffic: TrafficConfig,
    pub routing: RoutingConfig,
    pub attack: AttackConfig,
    pub defense: DefenseParams,
    pub metrics: MetricsConfig,
    pub sweep: SweepConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 1,
            variant: Variant::default(),
            duration: 200.0,
            network: NetworkConfig::default(),
            mobility: MobilityConfig::default(),
            traffic: TrafficConfig::default(),
            routing: RoutingConfig::default(),
            attack: AttackConfig::default(),
            defense: DefenseParams::default(),
            metrics: MetricsConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, reason))
    }
}

fn finite_nonneg(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

fn finite_pos(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        check(finite_pos(self.duration), "duration", "must be positive")?;

        let n = &self.network;
        check(n.node_count >= 1, "network.node_count", "must be at least 1")?;
        check(finite_pos(n.width), "network.width", "must be positive")?;
        check(finite_pos(n.height), "network.height", "must be positive")?;
        check(finite_pos(n.range), "network.range", "must be positive")?;
        check(finite_nonneg(n.per_hop_latency), "network.per_hop_latency", "must be non-negative")?;
        check(finite_nonneg(n.latency_jitter), "network.latency_jitter", "must be non-negative")?;
        check(unit(n.loss_prob), "network.loss_prob", "must lie in [0, 1]")?;
        check(n.queue_limit != Some(0), "network.queue_limit", "must be positive when set")?;
        if let Some(ps) = &n.positions {
            check(ps.len() == n.node_count, "network.positions", "needs one entry per node")?;
            let area = self.area();
            check(
                ps.iter().all(|&[x, y]| area.contains(Position::new(x, y))),
                "network.positions",
                "every position must lie inside the area",
            )?;
        }

        let m = &self.mobility;
        check(finite_nonneg(m.pause_time), "mobility.pause_time", "must be non-negative")?;
        check(finite_pos(m.speed_min), "mobility.speed_min", "must be positive")?;
        check(
            m.speed_max.is_finite() && m.speed_max >= m.speed_min,
            "mobility.speed_max",
            "must be at least speed_min",
        )?;

        let t = &self.traffic;
        check(finite_pos(t.rate), "traffic.rate", "must be positive")?;
        check(t.payload > 0, "traffic.payload", "must be positive")?;
        check(finite_nonneg(t.start), "traffic.start", "must be non-negative")?;
        check(finite_nonneg(t.start_jitter), "traffic.start_jitter", "must be non-negative")?;
        if let Some(stop) = t.stop {
            check(finite_nonneg(stop), "traffic.stop", "must be non-negative")?;
        }
        match &t.pairs {
            Some(pairs) => {
                for &[s, d] in pairs {
                    check(
                        (s as usize) < n.node_count && (d as usize) < n.node_count,
                        "traffic.pairs",
                        "node id out of range",
                    )?;
                    check(s != d, "traffic.pairs", "source and destination must differ")?;
                }
            }
            None => {
                check(
                    t.flows == 0 || (n.node_count >= 2 && t.flows <= n.node_count),
                    "traffic.flows",
                    "needs a distinct source node per flow",
                )?;
            }
        }

        let r = &self.routing;
        check(finite_pos(r.discovery_timeout), "routing.discovery_timeout", "must be positive")?;

        let a = &self.attack;
        check(finite_nonneg(a.reply_delay), "attack.reply_delay", "must be non-negative")?;
        let attackers = match &a.ids {
            Some(ids) => {
                check(
                    ids.iter().all(|&i| (i as usize) < n.node_count),
                    "attack.ids",
                    "node id out of range",
                )?;
                let mut sorted = ids.clone();
                sorted.sort_unstable();
                sorted.dedup();
                check(sorted.len() == ids.len(), "attack.ids", "ids must be distinct")?;
                if let Some(pairs) = &t.pairs {
                    for &[s, d] in pairs {
                        check(!ids.contains(&s), "attack.ids", "an attacker cannot be a flow source")?;
                        check(
                            a.allow_destinations || !ids.contains(&d),
                            "attack.ids",
                            "an attacker is a flow destination; set allow_destinations",
                        )?;
                    }
                }
                ids.len()
            }
            None => a.count,
        };
        check(attackers < n.node_count, "attack.count", "must be smaller than network.node_count")?;
        check(
            a.mode != AttackMode::Single || attackers <= 1,
            "attack.mode",
            "single mode allows at most one attacker",
        )?;

        let d = &self.defense;
        check(finite_pos(d.rrep_window), "defense.rrep_window", "must be positive")?;
        check(finite_nonneg(d.probe_timeout_per_hop), "defense.probe_timeout_per_hop", "must be non-negative")?;
        check(finite_pos(d.probe_timeout_floor), "defense.probe_timeout_floor", "must be positive")?;
        check(finite_pos(d.iteration_window), "defense.iteration_window", "must be positive")?;
        check(d.iteration_norm >= 1, "defense.iteration_norm", "must be at least 1")?;
        check(unit(d.reject_threshold), "defense.reject_threshold", "must lie in [0, 1]")?;
        check(d.direct_isolation >= 1, "defense.direct_isolation", "must be at least 1")?;
        check(d.alert_isolation >= 1, "defense.alert_isolation", "must be at least 1")?;
        let p = &d.detectors;
        check(p.population >= 1, "defense.detectors.population", "must be at least 1")?;
        check(
            p.worst_n < p.population,
            "defense.detectors.worst_n",
            "must be smaller than the population",
        )?;
        check(
            (1..=p.population).contains(&p.top_subset),
            "defense.detectors.top_subset",
            "must lie in [1, population]",
        )?;
        check(finite_nonneg(p.clone_factor), "defense.detectors.clone_factor", "must be non-negative")?;
        check(finite_nonneg(p.mutation_scale), "defense.detectors.mutation_scale", "must be non-negative")?;
        check(unit(p.match_threshold), "defense.detectors.match_threshold", "must lie in [0, 1]")?;

        if let Some(s) = self.metrics.snapshot_interval {
            check(finite_pos(s), "metrics.snapshot_interval", "must be positive")?;
        }

        let s = &self.sweep;
        check(!s.pause_times.is_empty(), "sweep.pause_times", "must not be empty")?;
        check(
            s.pause_times.iter().all(|&v| finite_nonneg(v)),
            "sweep.pause_times",
            "values must be non-negative",
        )?;
        check(s.seeds >= 1, "sweep.seeds", "must be at least 1")?;
        check(!s.variants.is_empty(), "sweep.variants", "must not be empty")?;
        Ok(())
    }

    pub fn area(&self) -> Area {
        Area {
            width: self.network.width,
            height: self.network.height,
        }
    }

    pub fn link_model(&self) -> LinkModel {
        LinkModel {
            range: self.network.range,
            per_hop_latency: Duration::from_secs_f64(self.network.per_hop_latency),
            latency_jitter: Duration::from_secs_f64(self.network.latency_jitter),
            loss_prob: self.network.loss_prob,
            queue_limit: self.network.queue_limit,
        }
    }

    /// Whether nodes never move during the run.
    pub fn is_static(&self) -> bool {
        self.network.positions.is_some() || self.mobility.pause_time >= self.duration
    }

    pub fn traffic_stop(&self) -> f64 {
        self.traffic.stop.unwrap_or(self.duration).min(self.duration)
    }
}
