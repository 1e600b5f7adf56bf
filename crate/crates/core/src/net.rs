//! Node placement, random-waypoint mobility and a unit-disk link layer.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::packet::NodeId;
use crate::rng::RngStream;
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Position { x, y }
    }

    pub fn distance(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    fn lerp(self, to: Position, frac: f64) -> Position {
        Position {
            x: self.x + (to.x - self.x) * frac,
            y: self.y + (to.y - self.y) * frac,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub width: f64,
    pub height: f64,
}

impl Area {
    pub fn contains(&self, p: Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn clamp(&self, p: Position) -> Position {
        Position {
            x: p.x.clamp(0.0, self.width),
            y: p.y.clamp(0.0, self.height),
        }
    }

    pub fn random_point(&self, rng: &mut RngStream) -> Position {
        Position {
            x: rng.uniform() * self.width,
            y: rng.uniform() * self.height,
        }
    }
}

/// One leg of movement: travel from `origin` (left at `departed_at`) toward
/// `waypoint`, arriving at `arrive_at`, then stay until `pause_until`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MobilityState {
    pub origin: Position,
    pub departed_at: SimTime,
    pub waypoint: Position,
    pub speed: f64,
    pub arrive_at: SimTime,
    pub pause_until: SimTime,
}

impl MobilityState {
    pub fn stationary(at: Position) -> Self {
        MobilityState {
            origin: at,
            departed_at: SimTime::ZERO,
            waypoint: at,
            speed: 0.0,
            arrive_at: SimTime::ZERO,
            pause_until: SimTime::MAX,
        }
    }

    /// Position at `t`, assuming `t` falls within this leg. Times after the
    /// leg hold the node at its waypoint.
    pub fn position_at(&self, t: SimTime) -> Position {
        if t >= self.arrive_at {
            return self.waypoint;
        }
        if t <= self.departed_at {
            return self.origin;
        }
        let total = (self.arrive_at - self.departed_at).as_secs_f64();
        let frac = (t - self.departed_at).as_secs_f64() / total;
        self.origin.lerp(self.waypoint, frac)
    }

    pub fn is_paused_at(&self, t: SimTime) -> bool {
        t >= self.arrive_at && t < self.pause_until
    }
}

/// Random-waypoint model: uniform destination, uniform speed, fixed pause.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandomWaypoint {
    pub area: Area,
    pub speed_min: f64,
    pub speed_max: f64,
    pub pause: Duration,
}

impl RandomWaypoint {
    /// Initial state: a random position, paused for one pause interval.
    pub fn initial(&self, rng: &mut RngStream) -> MobilityState {
        let at = self.area.random_point(rng);
        MobilityState {
            origin: at,
            departed_at: SimTime::ZERO,
            waypoint: at,
            speed: 0.0,
            arrive_at: SimTime::ZERO,
            pause_until: SimTime::ZERO + self.pause,
        }
    }

    /// Starts the next leg from wherever `prev` left the node at `now`.
    pub fn next_leg(&self, prev: &MobilityState, now: SimTime, rng: &mut RngStream) -> MobilityState {
        let origin = prev.position_at(now);
        let waypoint = self.area.random_point(rng);
        let speed = rng.uniform_between(self.speed_min, self.speed_max).max(1e-3);
        let travel = Duration::from_secs_f64(origin.distance(waypoint) / speed);
        let arrive_at = now + travel;
        MobilityState {
            origin,
            departed_at: now,
            waypoint,
            speed,
            arrive_at,
            pause_until: arrive_at + self.pause,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkModel {
    pub range: f64,
    pub per_hop_latency: Duration,
    pub latency_jitter: Duration,
    pub loss_prob: f64,
    /// Drop-tail bound on transmissions a node may have in the air at once.
    pub queue_limit: Option<usize>,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel {
            range: 250.0,
            per_hop_latency: Duration::from_millis(2),
            latency_jitter: Duration::from_millis(1),
            loss_prob: 0.0,
            queue_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Destination {
    Unicast(NodeId),
    Broadcast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub to: NodeId,
    pub at: SimTime,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TransmitOutcome {
    pub deliveries: Vec<Delivery>,
    /// Unicast target was beyond radio range.
    pub out_of_range: bool,
    /// Receivers lost to random link loss.
    pub lost: usize,
    /// The sender's outbound queue was full; nothing was sent.
    pub queue_full: bool,
}

pub struct NetModel {
    area: Area,
    link: LinkModel,
    nodes: Vec<MobilityState>,
    waypoint: Option<RandomWaypoint>,
    in_air: Vec<usize>,
}

impl NetModel {
    pub fn with_static_positions(area: Area, link: LinkModel, positions: &[Position]) -> Self {
        NetModel {
            area,
            link,
            nodes: positions.iter().map(|&p| MobilityState::stationary(p)).collect(),
            waypoint: None,
            in_air: vec![0; positions.len()],
        }
    }

    pub fn with_random_waypoint(
        model: RandomWaypoint,
        link: LinkModel,
        node_count: usize,
        rng: &mut RngStream,
    ) -> Self {
        let nodes = (0..node_count).map(|_| model.initial(rng)).collect();
        NetModel {
            area: model.area,
            link,
            nodes,
            waypoint: Some(model),
            in_air: vec![0; node_count],
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn area(&self) -> Area {
        self.area
    }

    pub fn link(&self) -> &LinkModel {
        &self.link
    }

    pub fn mobility(&self, node: NodeId) -> &MobilityState {
        &self.nodes[node.index()]
    }

    /// Advances `node` to its next leg; returns the new state, or `None` for
    /// static networks.
    pub fn advance_waypoint(&mut self, node: NodeId, now: SimTime, rng: &mut RngStream) -> Option<MobilityState> {
        let model = self.waypoint?;
        let next = model.next_leg(&self.nodes[node.index()], now, rng);
        self.nodes[node.index()] = next;
        Some(next)
    }

    pub fn position_at(&self, node: NodeId, t: SimTime) -> Position {
        self.area.clamp(self.nodes[node.index()].position_at(t))
    }

    pub fn positions_at(&self, t: SimTime) -> Vec<Position> {
        (0..self.nodes.len())
            .map(|i| self.position_at(NodeId(i as u32), t))
            .collect()
    }

    pub fn in_range(&self, a: NodeId, b: NodeId, t: SimTime) -> bool {
        a != b && self.position_at(a, t).distance(self.position_at(b, t)) <= self.link.range
    }

    /// All other nodes within radio range (closed ball), ascending by id.
    pub fn neighbors(&self, node: NodeId, t: SimTime) -> Vec<NodeId> {
        let here = self.position_at(node, t);
        (0..self.nodes.len() as u32)
            .map(NodeId)
            .filter(|&u| u != node && here.distance(self.position_at(u, t)) <= self.link.range)
            .collect()
    }

    fn hop_delay(&self, rng: &mut RngStream) -> Duration {
        let jitter = self.link.latency_jitter.as_secs_f64() * rng.uniform();
        self.link.per_hop_latency + Duration::from_secs_f64(jitter)
    }

    /// Hands a packet to the radio at `now`, sending after `extra_delay`.
    /// Returns the receivers and their delivery times.
    pub fn transmit(
        &mut self,
        from: NodeId,
        dest: Destination,
        now: SimTime,
        extra_delay: Duration,
        rng: &mut RngStream,
    ) -> TransmitOutcome {
        let mut out = TransmitOutcome::default();
        if let Some(limit) = self.link.queue_limit {
            if self.in_air[from.index()] >= limit {
                out.queue_full = true;
                return out;
            }
        }
        let receivers = match dest {
            Destination::Broadcast => self.neighbors(from, now),
            Destination::Unicast(to) => {
                if self.in_range(from, to, now) {
                    vec![to]
                } else {
                    out.out_of_range = true;
                    Vec::new()
                }
            }
        };
        for to in receivers {
            let at = now + extra_delay + self.hop_delay(rng);
            if rng.chance(self.link.loss_prob) {
                out.lost += 1;
                continue;
            }
            out.deliveries.push(Delivery { to, at });
        }
        self.in_air[from.index()] += out.deliveries.len();
        out
    }

    /// Marks one of `from`'s transmissions as having left the air.
    pub fn delivered(&mut self, from: NodeId) {
        let slot = &mut self.in_air[from.index()];
        *slot = slot.saturating_sub(1);
    }
}
