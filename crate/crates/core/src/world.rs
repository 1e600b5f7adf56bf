//! One simulated network: node state machines, radio, traffic sources and the
//! event handlers that tie them together.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::adversary::{forge_rrep, AttackerConfig, SinkCounter};
use crate::config::{ConfigError, ScenarioConfig, Variant};
use crate::defense::{
    feature_vector, score_candidates, select_route, train_detectors, CandidateSet, DetectorSet, Evidence, Offer,
    Pattern, ProbeSession, ProbeStep, ReplyLog, SuspicionTable, PROBES_PER_ROUTE,
};
use crate::dsr::{handle_rreq, handle_rrep_plain, rrep_next_hop, DiscoveryPhase, DiscoveryTable, RouteCache, RreqAction, SendBuffer};
use crate::metrics::{ControlKind, DropCause, MetricsLedger, MetricsReport};
use crate::net::{Destination, NetModel, Position, RandomWaypoint, TransmitOutcome};
use crate::packet::{DataPacket, FlowId, NodeId, Packet, Probe, ProbeAck, RouteRecord, Rrep, Rreq, SuspicionAlert};
use crate::rng::{RngStream, RngStreams};
use crate::sim::{secs, Engine, Event, EventHandle, EventKind, SimError, SimTime};
use crate::trace::{CandidateTrace, DefenseDecision, PacketEvent, Tracer};

#[derive(Clone, Debug, PartialEq)]
pub enum WorldEvent {
    Deliver { from: NodeId, to: NodeId, packet: Packet },
    Waypoint { node: NodeId },
    ProbeTimeout { probe_id: u64 },
    RrepWindow { node: NodeId, target: NodeId, request_id: u32 },
    /// No reply arrived for a flood in time.
    DiscoveryTimeout { node: NodeId, target: NodeId, request_id: u32 },
    TrafficTick { flow: FlowId },
    Snapshot,
}

impl EventKind for WorldEvent {
    fn kind(&self) -> &'static str {
        match self {
            WorldEvent::Deliver { .. } => "deliver",
            WorldEvent::Waypoint { .. } => "waypoint",
            WorldEvent::ProbeTimeout { .. } => "probe-timeout",
            WorldEvent::RrepWindow { .. } => "rrep-window",
            WorldEvent::DiscoveryTimeout { .. } => "discovery-timeout",
            WorldEvent::TrafficTick { .. } => "traffic-tick",
            WorldEvent::Snapshot => "snapshot",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowSpec {
    pub id: FlowId,
    pub source: NodeId,
    pub dest: NodeId,
    pub start: SimTime,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DefenseStats {
    pub vetted_discoveries: u64,
    pub candidates_probed: u64,
    pub routes_rejected: u64,
    pub alerts_sent: u64,
    pub detector_flags: u64,
    pub detector_trainings: u64,
    /// (node, suspect) isolation events across all nodes.
    pub isolations: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Snapshot {
    pub t: SimTime,
    pub originated: u64,
    pub received: u64,
    pub dropped: u64,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{source}\nlast events:\n{tail}")]
    Fault { source: SimError, tail: String },
    #[error("conservation violated: ledger has {ledger} in flight, network holds {buffered} buffered + {in_air} in the air")]
    Conservation { ledger: u64, buffered: u64, in_air: u64 },
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub variant: Variant,
    pub seed: u64,
    pub report: MetricsReport,
    pub ledger: MetricsLedger,
    pub flows: Vec<FlowSpec>,
    pub attackers: Vec<NodeId>,
    pub sinks: SinkCounter,
    pub defense: DefenseStats,
    /// Number of nodes that isolated each suspect by run end.
    pub isolated_by: BTreeMap<NodeId, u32>,
    pub snapshots: Vec<Snapshot>,
    pub events_processed: usize,
}

impl RunOutput {
    /// Flat `key=value` report.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant={}", self.variant);
        let _ = writeln!(s, "seed={}", self.seed);
        s.push_str(&self.report.to_kv());
        let roster: Vec<String> = self.attackers.iter().map(|a| a.to_string()).collect();
        let _ = writeln!(s, "attackers={}", roster.join(","));
        for (a, c) in self.sinks.iter() {
            let _ = writeln!(s, "sink.{a}.data={}", c.data);
            let _ = writeln!(s, "sink.{a}.probe={}", c.probe);
        }
        let d = &self.defense;
        let _ = writeln!(s, "defense.vetted_discoveries={}", d.vetted_discoveries);
        let _ = writeln!(s, "defense.candidates_probed={}", d.candidates_probed);
        let _ = writeln!(s, "defense.routes_rejected={}", d.routes_rejected);
        let _ = writeln!(s, "defense.alerts_sent={}", d.alerts_sent);
        let _ = writeln!(s, "defense.detector_flags={}", d.detector_flags);
        let _ = writeln!(s, "defense.detector_trainings={}", d.detector_trainings);
        let _ = writeln!(s, "defense.isolations={}", d.isolations);
        for (n, k) in &self.isolated_by {
            let _ = writeln!(s, "isolated.{n}={k}");
        }
        let _ = writeln!(s, "events_processed={}", self.events_processed);
        s
    }
}

struct Collection {
    request_id: u32,
    set: CandidateSet,
    sessions: Vec<ProbeSession>,
    remaining: usize,
}

struct DefenseState {
    replies: ReplyLog,
    collecting: BTreeMap<NodeId, Collection>,
    suspicion: SuspicionTable,
    self_patterns: Vec<Pattern>,
    detectors: Option<DetectorSet>,
    relayed_alerts: BTreeSet<(NodeId, NodeId)>,
}

struct Node {
    attacker: bool,
    cache: RouteCache,
    discoveries: DiscoveryTable,
    seen: BTreeSet<(NodeId, u32)>,
    buffer: SendBuffer,
    forged: BTreeSet<(NodeId, u32)>,
    defense: Option<DefenseState>,
}

struct ProbeRef {
    origin: NodeId,
    target: NodeId,
    request_id: u32,
    candidate: usize,
    timeout: EventHandle,
}

struct FlowState {
    spec: FlowSpec,
    next_seq: u64,
}

const TAIL_LEN: usize = 32;

pub struct World {
    cfg: ScenarioConfig,
    end: SimTime,
    stop: f64,
    engine: Engine<WorldEvent>,
    net: NetModel,
    rngs: RngStreams,
    nodes: Vec<Node>,
    flows: Vec<FlowState>,
    attackers: AttackerConfig,
    sinks: SinkCounter,
    ledger: MetricsLedger,
    tracer: Tracer,
    probes: HashMap<u64, ProbeRef>,
    next_probe_id: u64,
    data_in_air: u64,
    stats: DefenseStats,
    snapshots: Vec<Snapshot>,
    recent: VecDeque<(SimTime, u64, &'static str, Option<NodeId>)>,
}

fn draw(pool: &mut Vec<NodeId>, rng: &mut RngStream) -> NodeId {
    let i = rng
        .uniform_int(0..pool.len() as u64)
        .expect("caller checks the pool is non-empty") as usize;
    pool.swap_remove(i)
}

/// Picks flows and the attacker pool from the traffic stream. Flows come
/// first so that every variant of a seed sees the same traffic; the pool is
/// drawn even when the variant runs without attackers.
pub fn plan_roles(cfg: &ScenarioConfig, rng: &mut RngStream) -> Result<(Vec<FlowSpec>, BTreeSet<NodeId>), ConfigError> {
    let n = cfg.network.node_count;
    let t = &cfg.traffic;
    let pairs: Vec<(NodeId, NodeId)> = match &t.pairs {
        Some(p) => p.iter().map(|&[s, d]| (NodeId(s), NodeId(d))).collect(),
        None => {
            let mut pool: Vec<NodeId> = (0..n as u32).map(NodeId).collect();
            (0..t.flows)
                .map(|_| {
                    let s = draw(&mut pool, rng);
                    let j = rng.uniform_int(0..n as u64 - 1).expect("at least two nodes") as u32;
                    let d = if j >= s.0 { NodeId(j + 1) } else { NodeId(j) };
                    (s, d)
                })
                .collect()
        }
    };
    let flows: Vec<FlowSpec> = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (source, dest))| FlowSpec {
            id: FlowId(i as u32),
            source,
            dest,
            start: SimTime::from_secs_f64(t.start + t.start_jitter * rng.uniform()),
        })
        .collect();

    let attackers = match &cfg.attack.ids {
        Some(ids) => ids.iter().map(|&i| NodeId(i)).collect(),
        None => {
            let sources: BTreeSet<NodeId> = flows.iter().map(|f| f.source).collect();
            let dests: BTreeSet<NodeId> = flows.iter().map(|f| f.dest).collect();
            let mut pool: Vec<NodeId> = (0..n as u32)
                .map(NodeId)
                .filter(|v| !sources.contains(v) && (cfg.attack.allow_destinations || !dests.contains(v)))
                .collect();
            if pool.len() < cfg.attack.count {
                return Err(ConfigError::Invalid {
                    field: "attack.count".into(),
                    reason: format!("only {} nodes are not flow endpoints", pool.len()),
                });
            }
            (0..cfg.attack.count).map(|_| draw(&mut pool, rng)).collect()
        }
    };
    Ok((flows, attackers))
}

fn control_kind(p: &Packet) -> ControlKind {
    match p {
        Packet::Rreq(_) => ControlKind::Rreq,
        Packet::Rrep(_) => ControlKind::Rrep,
        Packet::Probe(_) => ControlKind::Probe,
        Packet::ProbeAck(_) => ControlKind::ProbeAck,
        Packet::Alert(_) | Packet::Data(_) => ControlKind::Alert,
    }
}

type Step = Result<(), String>;

impl World {
    pub fn new(cfg: &ScenarioConfig, tracer: Tracer) -> Result<World, ConfigError> {
        cfg.validate()?;
        let mut rngs = RngStreams::new(cfg.seed);
        let n = cfg.network.node_count;
        let net = match &cfg.network.positions {
            Some(ps) => {
                let ps: Vec<Position> = ps.iter().map(|&[x, y]| Position::new(x, y)).collect();
                NetModel::with_static_positions(cfg.area(), cfg.link_model(), &ps)
            }
            None => {
                let model = RandomWaypoint {
                    area: cfg.area(),
                    speed_min: cfg.mobility.speed_min,
                    speed_max: cfg.mobility.speed_max,
                    pause: secs(cfg.mobility.pause_time),
                };
                NetModel::with_random_waypoint(model, cfg.link_model(), n, &mut rngs.mobility)
            }
        };
        let (flows, pool) = plan_roles(cfg, &mut rngs.traffic)?;
        let attacker_ids = if cfg.variant.has_attackers() { pool } else { BTreeSet::new() };
        let attackers = AttackerConfig {
            attacker_ids,
            reply_delay: secs(cfg.attack.reply_delay),
            mode: cfg.attack.mode,
        };

        let nodes = (0..n as u32)
            .map(NodeId)
            .map(|id| {
                let attacker = attackers.is_attacker(id);
                Node {
                    attacker,
                    cache: RouteCache::new(id),
                    discoveries: DiscoveryTable::new(id),
                    seen: BTreeSet::new(),
                    buffer: SendBuffer::new(cfg.routing.send_buffer),
                    forged: BTreeSet::new(),
                    defense: (cfg.variant.defense_enabled() && !attacker).then(|| DefenseState {
                        replies: ReplyLog::new(),
                        collecting: BTreeMap::new(),
                        suspicion: SuspicionTable::new(id, cfg.defense.thresholds()),
                        self_patterns: Vec::new(),
                        detectors: None,
                        relayed_alerts: BTreeSet::new(),
                    }),
                }
            })
            .collect();

        let end = SimTime::from_secs_f64(cfg.duration);
        let mut world = World {
            cfg: cfg.clone(),
            end,
            stop: cfg.traffic_stop(),
            engine: Engine::new(),
            net,
            rngs,
            nodes,
            flows: flows.into_iter().map(|spec| FlowState { spec, next_seq: 0 }).collect(),
            sinks: SinkCounter::new(&attackers.attacker_ids),
            attackers,
            ledger: MetricsLedger::new(),
            tracer,
            probes: HashMap::new(),
            next_probe_id: 0,
            data_in_air: 0,
            stats: DefenseStats::default(),
            snapshots: Vec::new(),
            recent: VecDeque::with_capacity(TAIL_LEN),
        };
        world.seed_events();
        Ok(world)
    }

    fn seed_events(&mut self) {
        let eng = &mut self.engine;
        for f in &self.flows {
            if f.spec.start.as_secs_f64() < self.stop {
                eng.schedule(f.spec.start, WorldEvent::TrafficTick { flow: f.spec.id })
                    .expect("start times are non-negative");
            }
        }
        for i in 0..self.net.node_count() {
            let node = NodeId(i as u32);
            let p = self.net.position_at(node, SimTime::ZERO);
            self.tracer.mobility(SimTime::ZERO, node, p.x, p.y);
            if self.cfg.is_static() {
                continue;
            }
            let leave = self.net.mobility(node).pause_until;
            if leave < self.end {
                eng.schedule(leave, WorldEvent::Waypoint { node }).expect("future");
            }
        }
        if let Some(iv) = self.cfg.metrics.snapshot_interval {
            let at = SimTime::ZERO + secs(iv);
            if at <= self.end {
                eng.schedule(at, WorldEvent::Snapshot).expect("future");
            }
        }
    }

    pub fn flows(&self) -> Vec<FlowSpec> {
        self.flows.iter().map(|f| f.spec.clone()).collect()
    }

    pub fn attackers(&self) -> &BTreeSet<NodeId> {
        &self.attackers.attacker_ids
    }

    pub fn run(mut self) -> Result<RunOutput, RunError> {
        let mut engine = std::mem::take(&mut self.engine);
        let end = self.end;
        let processed = engine
            .run_until(end, |eng, ev| self.handle(eng, ev))
            .map_err(|source| RunError::Fault {
                source,
                tail: self.tail(),
            })?;

        let buffered: u64 = self.nodes.iter().map(|n| n.buffer.len() as u64).sum();
        if self.ledger.in_flight() != buffered + self.data_in_air {
            return Err(RunError::Conservation {
                ledger: self.ledger.in_flight(),
                buffered,
                in_air: self.data_in_air,
            });
        }
        self.tracer.finish()?;

        let mut isolated_by = BTreeMap::new();
        for n in &self.nodes {
            if let Some(d) = &n.defense {
                for s in d.suspicion.isolated() {
                    *isolated_by.entry(s).or_insert(0) += 1;
                }
            }
        }
        let report = MetricsReport::from_ledger(&self.ledger, self.cfg.duration, self.cfg.metrics.accounting);
        Ok(RunOutput {
            variant: self.cfg.variant,
            seed: self.cfg.seed,
            report,
            flows: self.flows(),
            attackers: self.attackers.attacker_ids.iter().copied().collect(),
            sinks: self.sinks,
            defense: self.stats,
            isolated_by,
            snapshots: self.snapshots,
            events_processed: processed,
            ledger: self.ledger,
        })
    }

    fn tail(&self) -> String {
        let mut s = String::new();
        for (t, seq, kind, node) in &self.recent {
            let node = node.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
            let _ = writeln!(s, "  t={t} seq={seq} {kind} {node}");
        }
        s
    }

    fn event_node(&self, ev: &WorldEvent) -> Option<NodeId> {
        match ev {
            WorldEvent::Deliver { to, .. } => Some(*to),
            WorldEvent::Waypoint { node } | WorldEvent::RrepWindow { node, .. } | WorldEvent::DiscoveryTimeout { node, .. } => {
                Some(*node)
            }
            WorldEvent::ProbeTimeout { probe_id } => self.probes.get(probe_id).map(|p| p.origin),
            WorldEvent::TrafficTick { flow } => Some(self.flows[flow.0 as usize].spec.source),
            WorldEvent::Snapshot => None,
        }
    }

    fn handle(&mut self, eng: &mut Engine<WorldEvent>, ev: &Event<WorldEvent>) -> Step {
        let node = self.event_node(&ev.payload);
        let kind = ev.payload.kind();
        if self.recent.len() == TAIL_LEN {
            self.recent.pop_front();
        }
        self.recent.push_back((ev.fire_at, ev.seq, kind, node));
        if self.tracer.enabled(crate::trace::Channel::Events) {
            let detail = match &ev.payload {
                WorldEvent::Deliver { from, packet, .. } => format!("{} from {from}", packet.kind()),
                WorldEvent::ProbeTimeout { probe_id } => format!("probe {probe_id}"),
                WorldEvent::RrepWindow { target, request_id, .. } | WorldEvent::DiscoveryTimeout { target, request_id, .. } => {
                    format!("target {target} request {request_id}")
                }
                WorldEvent::TrafficTick { flow } => format!("flow {flow}"),
                WorldEvent::Waypoint { .. } | WorldEvent::Snapshot => String::new(),
            };
            self.tracer.event(ev.fire_at, ev.seq, kind, node, &detail);
        }

        match &ev.payload {
            WorldEvent::Deliver { from, to, packet } => self.on_deliver(eng, *from, *to, packet.clone()),
            WorldEvent::Waypoint { node } => {
                self.on_waypoint(eng, *node);
                Ok(())
            }
            WorldEvent::ProbeTimeout { probe_id } => self.resolve_probe(eng, *probe_id, false),
            WorldEvent::RrepWindow { node, target, request_id } => self.on_rrep_window(eng, *node, *target, *request_id),
            WorldEvent::DiscoveryTimeout { node, target, request_id } => {
                let awaiting = self.nodes[node.index()]
                    .discoveries
                    .matching(*target, *request_id)
                    .is_some_and(|p| p.phase == DiscoveryPhase::AwaitingReply);
                if awaiting {
                    self.retry_discovery(eng, *node, *target)?;
                }
                Ok(())
            }
            WorldEvent::TrafficTick { flow } => self.on_tick(eng, *flow),
            WorldEvent::Snapshot => {
                self.on_snapshot(eng);
                Ok(())
            }
        }
    }

    fn transmit(
        &mut self,
        eng: &mut Engine<WorldEvent>,
        from: NodeId,
        dest: Destination,
        packet: Packet,
        extra_delay: Duration,
        event: PacketEvent,
    ) -> TransmitOutcome {
        let now = eng.now();
        let out = self.net.transmit(from, dest, now, extra_delay, &mut self.rngs.link);
        if !out.queue_full {
            if packet.is_control() {
                self.ledger.control(now, control_kind(&packet));
            } else {
                self.data_in_air += out.deliveries.len() as u64;
            }
        }
        let to = match dest {
            Destination::Unicast(t) => Some(t),
            Destination::Broadcast => None,
        };
        self.tracer.packet(now, event, &packet, from, to);
        for d in &out.deliveries {
            eng.schedule(
                d.at,
                WorldEvent::Deliver {
                    from,
                    to: d.to,
                    packet: packet.clone(),
                },
            )
            .expect("deliveries are never in the past");
        }
        out
    }

    fn trace_drop(&mut self, now: SimTime, packet: &Packet, at: NodeId) {
        self.tracer.packet(now, PacketEvent::Drop, packet, at, None);
    }

    // ---- traffic and data forwarding ----

    fn on_tick(&mut self, eng: &mut Engine<WorldEvent>, flow: FlowId) -> Step {
        let now = eng.now();
        let rate = self.cfg.traffic.rate;
        let payload = self.cfg.traffic.payload;
        let f = &mut self.flows[flow.0 as usize];
        let seq = f.next_seq;
        f.next_seq += 1;
        let spec = f.spec.clone();
        let next = spec.start + secs((seq + 1) as f64 / rate);
        if next.as_secs_f64() < self.stop {
            eng.schedule(next, WorldEvent::TrafficTick { flow }).map_err(|e| e.to_string())?;
        }

        self.ledger.send(flow, seq, now, payload).map_err(|e| e.to_string())?;
        let pkt = DataPacket {
            flow,
            seq,
            source_route: RouteRecord::starting_at(spec.source),
            cursor: 0,
            payload_size: payload,
            created_at: now,
        };
        self.send_from_source(eng, spec.source, spec.dest, pkt)
    }

    fn send_from_source(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, dest: NodeId, mut pkt: DataPacket) -> Step {
        match self.nodes[node.index()].cache.lookup(dest).cloned() {
            Some(route) => {
                pkt.source_route = route;
                pkt.cursor = 0;
                self.forward_data(eng, node, pkt)
            }
            None => {
                if let Err(p) = self.nodes[node.index()].buffer.push(dest, pkt) {
                    self.drop_data(eng.now(), node, &p, DropCause::Buffer)?;
                }
                self.start_discovery(eng, node, dest)
            }
        }
    }

    fn drop_data(&mut self, now: SimTime, at: NodeId, pkt: &DataPacket, cause: DropCause) -> Step {
        self.ledger
            .drop_packet(pkt.flow, pkt.seq, now, cause)
            .map_err(|e| e.to_string())?;
        if cause == DropCause::Blackhole {
            self.sinks.sink_data(at);
        }
        if self.tracer.enabled(crate::trace::Channel::Packets) {
            self.trace_drop(now, &Packet::Data(pkt.clone()), at);
        }
        Ok(())
    }

    /// Sends `pkt` from `node` (at `pkt.cursor`) to the next hop on its route.
    fn forward_data(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, mut pkt: DataPacket) -> Step {
        let now = eng.now();
        let hop = pkt.cursor + 1;
        let Some(next) = pkt.source_route.get(hop) else {
            return Err(format!("{node}: data {}/{} has no hop after {}", pkt.flow, pkt.seq, pkt.source_route));
        };
        pkt.cursor = hop;
        let origin = pkt.source_route.origin();
        let event = if node == origin { PacketEvent::Send } else { PacketEvent::Fwd };
        let out = self.transmit(eng, node, Destination::Unicast(next), Packet::Data(pkt.clone()), Duration::ZERO, event);
        if out.queue_full {
            self.drop_data(now, node, &pkt, DropCause::Buffer)?;
        } else if out.out_of_range {
            self.drop_data(now, node, &pkt, DropCause::Link)?;
            self.nodes[node.index()].cache.invalidate_link(node, next);
            // Breakage is known to the source without a control packet.
            self.nodes[origin.index()].cache.invalidate_link(node, next);
        } else if out.lost > 0 {
            self.drop_data(now, node, &pkt, DropCause::Link)?;
        }
        Ok(())
    }

    fn on_data(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, pkt: DataPacket) -> Step {
        if pkt.source_route.get(pkt.cursor) != Some(node) {
            return Err(format!("{node}: data cursor {} does not point here on {}", pkt.cursor, pkt.source_route));
        }
        let last = pkt.cursor + 1 == pkt.source_route.len();
        if last {
            return self
                .ledger
                .receive(pkt.flow, pkt.seq, eng.now())
                .map_err(|e| e.to_string());
        }
        if self.nodes[node.index()].attacker {
            return self.drop_data(eng.now(), node, &pkt, DropCause::Blackhole);
        }
        self.forward_data(eng, node, pkt)
    }

    /// Sends every buffered packet for `target` along the cached route.
    fn flush(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId) -> Step {
        let pending = self.nodes[node.index()].buffer.take(target);
        for pkt in pending {
            self.send_from_source(eng, node, target, pkt)?;
        }
        Ok(())
    }

    // ---- discovery ----

    fn start_discovery(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId) -> Step {
        match self.nodes[node.index()].discoveries.start(target, eng.now()) {
            Ok(Some(rreq)) => {
                self.flood(eng, node, rreq);
                Ok(())
            }
            Ok(None) => Ok(()),
            Err(e) => Err(e.to_string()),
        }
    }

    fn flood(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, rreq: Rreq) {
        eng.schedule_in(
            secs(self.cfg.routing.discovery_timeout),
            WorldEvent::DiscoveryTimeout {
                node,
                target: rreq.target,
                request_id: rreq.request_id,
            },
        );
        self.transmit(eng, node, Destination::Broadcast, Packet::Rreq(rreq), Duration::ZERO, PacketEvent::Send);
    }

    /// Re-floods if retries remain; otherwise gives up on every packet
    /// waiting for `target`.
    fn retry_discovery(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId) -> Step {
        let now = eng.now();
        let max = self.cfg.routing.max_retries;
        match self.nodes[node.index()].discoveries.retry(target, max, now) {
            Some(rreq) => self.flood(eng, node, rreq),
            None => {
                let stranded = self.nodes[node.index()].buffer.take(target);
                for pkt in stranded {
                    self.drop_data(now, node, &pkt, DropCause::NoRoute)?;
                }
            }
        }
        Ok(())
    }

    fn on_rreq(&mut self, eng: &mut Engine<WorldEvent>, from: NodeId, node: NodeId, rreq: Rreq) -> Step {
        let cached_replies = self.cfg.routing.cached_replies;
        let n = &mut self.nodes[node.index()];
        if n.attacker && rreq.target != node {
            if rreq.record.contains(node) || !n.forged.insert((rreq.origin, rreq.request_id)) {
                return Ok(());
            }
            if let Some(rrep) = forge_rrep(node, &rreq) {
                let delay = self.attackers.reply_delay;
                self.send_rrep(eng, node, rrep, delay)?;
            }
            return Ok(());
        }
        if n.defense.as_ref().is_some_and(|d| d.suspicion.is_isolated(from)) {
            self.trace_drop(eng.now(), &Packet::Rreq(rreq), node);
            return Ok(());
        }
        let Node { seen, cache, .. } = n;
        let cache = cached_replies.then_some(&*cache);
        match handle_rreq(node, &rreq, seen, cache) {
            RreqAction::Drop => Ok(()),
            RreqAction::Reply(rrep) => self.send_rrep(eng, node, rrep, Duration::ZERO),
            RreqAction::Rebroadcast(r) => {
                self.transmit(eng, node, Destination::Broadcast, Packet::Rreq(r), Duration::ZERO, PacketEvent::Fwd);
                Ok(())
            }
        }
    }

    /// Hands a reply held at `node` to the previous node on its route.
    fn send_rrep(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, mut rrep: Rrep, delay: Duration) -> Step {
        let Some(next) = rrep_next_hop(&rrep) else {
            return Err(format!("{node}: reply for {} has nowhere to go", rrep.route));
        };
        rrep.cursor -= 1;
        let event = if node == rrep.replier { PacketEvent::Send } else { PacketEvent::Fwd };
        self.transmit(eng, node, Destination::Unicast(next), Packet::Rrep(rrep), delay, event);
        Ok(())
    }

    fn on_rrep(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, rrep: Rrep) -> Step {
        if rrep.route.get(rrep.cursor) != Some(node) {
            return Err(format!("{node}: reply cursor {} does not point here on {}", rrep.cursor, rrep.route));
        }
        if rrep.cursor == 0 {
            return self.rrep_at_origin(eng, node, rrep);
        }
        let n = &self.nodes[node.index()];
        let refuse = n.attacker || n.defense.as_ref().is_some_and(|d| d.suspicion.is_isolated(rrep.replier));
        if refuse {
            self.trace_drop(eng.now(), &Packet::Rrep(rrep), node);
            return Ok(());
        }
        self.send_rrep(eng, node, rrep, Duration::ZERO)
    }

    fn rrep_at_origin(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, rrep: Rrep) -> Step {
        let now = eng.now();
        if rrep.origin != node {
            return Err(format!("{node}: reply for origin {} ended here", rrep.origin));
        }
        let window = self.cfg.defense.window();
        let span = self.cfg.defense.iteration_span();
        let n = &mut self.nodes[node.index()];
        let Some(d) = n.defense.as_mut() else {
            if let Some(route) = handle_rrep_plain(&mut n.discoveries, &rrep) {
                n.cache.insert(route, now).map_err(|e| e.to_string())?;
                self.flush(eng, node, rrep.target)?;
            }
            return Ok(());
        };

        if d.suspicion.is_isolated(rrep.replier) {
            self.trace_drop(now, &Packet::Rrep(rrep), node);
            return Ok(());
        }
        d.replies.prune(now.saturating_sub(span));
        d.replies.record(rrep.replier, now);
        let iterations = d.replies.count(rrep.replier, now, span);
        let Some(pending) = n.discoveries.matching(rrep.target, rrep.request_id) else {
            return Ok(());
        };
        match pending.phase {
            DiscoveryPhase::AwaitingReply => {
                pending.phase = DiscoveryPhase::Collecting;
                let set = CandidateSet::open(now, window);
                eng.schedule(
                    set.closes_at,
                    WorldEvent::RrepWindow {
                        node,
                        target: rrep.target,
                        request_id: rrep.request_id,
                    },
                )
                .map_err(|e| e.to_string())?;
                d.collecting.insert(
                    rrep.target,
                    Collection {
                        request_id: rrep.request_id,
                        set,
                        sessions: Vec::new(),
                        remaining: 0,
                    },
                );
            }
            DiscoveryPhase::Collecting => {}
            DiscoveryPhase::Probing => return Ok(()),
        }
        if let Some(c) = d.collecting.get_mut(&rrep.target) {
            if c.set.offer(&rrep, iterations, now) == Offer::Late {
                return Ok(());
            }
        }
        Ok(())
    }

    // ---- probing and route vetting ----

    fn on_rrep_window(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId, request_id: u32) -> Step {
        let n = &mut self.nodes[node.index()];
        let Some(pending) = n.discoveries.matching(target, request_id) else {
            return Ok(());
        };
        if pending.phase != DiscoveryPhase::Collecting {
            return Ok(());
        }
        pending.phase = DiscoveryPhase::Probing;
        let Some(c) = n.defense.as_mut().and_then(|d| d.collecting.get_mut(&target)) else {
            return Err(format!("{node}: window closed for {target} without a candidate set"));
        };
        let count = c.set.candidates.len();
        c.sessions = vec![ProbeSession::new(); count];
        c.remaining = count;
        self.stats.candidates_probed += count as u64;
        if count == 0 {
            return self.finalize(eng, node, target);
        }
        for idx in 0..count {
            self.issue_probe(eng, node, target, idx)?;
        }
        Ok(())
    }

    fn issue_probe(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId, idx: usize) -> Step {
        let now = eng.now();
        let id = self.next_probe_id;
        self.next_probe_id += 1;
        let Some(c) = self.nodes[node.index()]
            .defense
            .as_mut()
            .and_then(|d| d.collecting.get_mut(&target))
        else {
            return Err(format!("{node}: probing {target} without a candidate set"));
        };
        let route = c.set.candidates[idx].route.clone();
        let timeout = self.cfg.defense.probe_timeout(route.hop_count() as u32);
        let handle = eng.schedule_in(timeout, WorldEvent::ProbeTimeout { probe_id: id });
        c.sessions[idx].issue(id);
        self.probes.insert(
            id,
            ProbeRef {
                origin: node,
                target,
                request_id: c.request_id,
                candidate: idx,
                timeout: handle,
            },
        );
        let Some(first) = route.get(1) else {
            return Err(format!("{node}: candidate route {route} has no hops"));
        };
        let probe = Probe {
            probe_id: id,
            route,
            cursor: 1,
            issued_at: now,
            timeout_at: now + timeout,
        };
        self.transmit(eng, node, Destination::Unicast(first), Packet::Probe(probe), Duration::ZERO, PacketEvent::Send);
        Ok(())
    }

    fn on_probe(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, mut probe: Probe) -> Step {
        if probe.route.get(probe.cursor) != Some(node) {
            return Err(format!("{node}: probe cursor {} does not point here on {}", probe.cursor, probe.route));
        }
        if self.nodes[node.index()].attacker {
            self.sinks.sink_probe(node);
            self.trace_drop(eng.now(), &Packet::Probe(probe), node);
            return Ok(());
        }
        if probe.cursor + 1 == probe.route.len() {
            let ack = ProbeAck {
                probe_id: probe.probe_id,
                cursor: probe.cursor,
                route: probe.route,
            };
            return self.send_ack(eng, node, ack);
        }
        probe.cursor += 1;
        let next = probe.route.get(probe.cursor).expect("checked above");
        self.transmit(eng, node, Destination::Unicast(next), Packet::Probe(probe), Duration::ZERO, PacketEvent::Fwd);
        Ok(())
    }

    fn send_ack(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, mut ack: ProbeAck) -> Step {
        let Some(prev) = ack.cursor.checked_sub(1) else {
            return Err(format!("{node}: confirmation at origin has nowhere to go"));
        };
        ack.cursor = prev;
        let next = ack.route.get(prev).expect("prefix of the route");
        let event = if node == ack.route.last() { PacketEvent::Send } else { PacketEvent::Fwd };
        self.transmit(eng, node, Destination::Unicast(next), Packet::ProbeAck(ack), Duration::ZERO, event);
        Ok(())
    }

    fn on_probe_ack(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, ack: ProbeAck) -> Step {
        if ack.route.get(ack.cursor) != Some(node) {
            return Err(format!("{node}: confirmation cursor {} does not point here on {}", ack.cursor, ack.route));
        }
        if ack.cursor == 0 {
            return self.resolve_probe(eng, ack.probe_id, true);
        }
        if self.nodes[node.index()].attacker {
            self.trace_drop(eng.now(), &Packet::ProbeAck(ack), node);
            return Ok(());
        }
        self.send_ack(eng, node, ack)
    }

    fn resolve_probe(&mut self, eng: &mut Engine<WorldEvent>, probe_id: u64, ok: bool) -> Step {
        let Some(pr) = self.probes.remove(&probe_id) else {
            return Ok(());
        };
        if ok {
            eng.cancel(pr.timeout);
        }
        let (step, remaining) = {
            let Some(c) = self.nodes[pr.origin.index()]
                .defense
                .as_mut()
                .and_then(|d| d.collecting.get_mut(&pr.target))
                .filter(|c| c.request_id == pr.request_id)
            else {
                return Ok(());
            };
            let session = &mut c.sessions[pr.candidate];
            let step = if ok { session.on_ack(probe_id) } else { session.on_timeout(probe_id) };
            if let ProbeStep::Done { .. } = step {
                c.remaining -= 1;
            }
            (step, c.remaining)
        };
        match step {
            ProbeStep::Next => self.issue_probe(eng, pr.origin, pr.target, pr.candidate),
            ProbeStep::Done { .. } if remaining == 0 => self.finalize(eng, pr.origin, pr.target),
            _ => Ok(()),
        }
    }

    /// Scores the probed candidates, updates suspicion and detectors, and
    /// either adopts the selected route or retries discovery.
    fn finalize(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, target: NodeId) -> Step {
        let now = eng.now();
        let params = &self.cfg.defense;
        let n = &mut self.nodes[node.index()];
        let Some(d) = n.defense.as_mut() else {
            return Ok(());
        };
        let Some(coll) = d.collecting.remove(&target) else {
            return Ok(());
        };
        let mut cands = coll.set.candidates;
        for (c, s) in cands.iter_mut().zip(&coll.sessions) {
            c.probe_successes = s.successes();
            c.probe_failures = s.failures();
        }
        score_candidates(&mut cands).map_err(|e| e.to_string())?;
        self.stats.vetted_discoveries += 1;

        // Only a replier that is neither us nor the destination can have
        // fabricated the route.
        let accusable = |c: NodeId| c != node && c != target;
        let mut alerts = Vec::new();
        for c in cands.iter().filter(|c| c.probe_failures == PROBES_PER_ROUTE && accusable(c.replier)) {
            let out = d.suspicion.accuse(c.replier, Evidence::Direct, now);
            if out.newly_isolated {
                self.stats.isolations += 1;
                n.cache.invalidate_node(c.replier);
            }
            if out.first_direct {
                alerts.push(c.replier);
            }
        }

        let max_hop = cands.iter().map(|c| c.hop_count).max().unwrap_or(1);
        if let Some(ds) = &d.detectors {
            for c in &cands {
                let verdict = ds
                    .classify(&feature_vector(c, max_hop, params.iteration_norm))
                    .map_err(|e| e.to_string())?;
                if !verdict.matched_self && accusable(c.replier) {
                    self.stats.detector_flags += 1;
                    if d.suspicion.accuse(c.replier, Evidence::Detector, now).newly_isolated {
                        self.stats.isolations += 1;
                        n.cache.invalidate_node(c.replier);
                    }
                }
            }
        }

        let selection = select_route(&cands, params.reject_threshold, |x| d.suspicion.is_isolated(x));
        self.stats.routes_rejected += selection.rejected.len() as u64;

        let mut grew = false;
        for c in cands.iter().filter(|c| c.probe_failures == 0) {
            let fv = feature_vector(c, max_hop, params.iteration_norm);
            if d.self_patterns.len() < params.self_pattern_cap && !d.self_patterns.contains(&fv) {
                d.self_patterns.push(fv);
                grew = true;
            }
        }
        if grew {
            let set = train_detectors(&d.self_patterns, &params.detectors, &mut self.rngs.ais_mutation)
                .map_err(|e| e.to_string())?;
            d.detectors = Some(set);
            self.stats.detector_trainings += 1;
        }

        let chosen = selection.chosen.map(|i| cands[i].route.clone());
        if self.tracer.enabled(crate::trace::Channel::Defense) {
            let decision = DefenseDecision {
                t: now,
                origin: node,
                discovery: coll.request_id,
                candidates: cands
                    .iter()
                    .map(|c| CandidateTrace {
                        route: c.route.clone(),
                        hops: c.hop_count,
                        iter: c.replier_rrep_iterations,
                        p_bh: c.p_bh,
                        fr: c.fitness,
                        score: c.secure_score,
                    })
                    .collect(),
                chosen: chosen.clone(),
                rejected: selection.rejected.iter().map(|&i| cands[i].route.clone()).collect(),
                alerts: alerts.clone(),
            };
            self.tracer.defense(&decision);
        }

        for suspect in alerts {
            self.stats.alerts_sent += 1;
            let alert = SuspicionAlert { accuser: node, suspect };
            self.transmit(eng, node, Destination::Broadcast, Packet::Alert(alert), Duration::ZERO, PacketEvent::Send);
        }

        match chosen {
            Some(route) => {
                let n = &mut self.nodes[node.index()];
                n.discoveries.close(target);
                n.cache.insert(route, now).map_err(|e| e.to_string())?;
                self.flush(eng, node, target)
            }
            None => self.retry_discovery(eng, node, target),
        }
    }

    fn on_alert(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId, alert: SuspicionAlert) {
        let now = eng.now();
        let flood = self.cfg.defense.alert_flood;
        let n = &mut self.nodes[node.index()];
        let Some(d) = n.defense.as_mut() else {
            return;
        };
        if alert.suspect == node || alert.accuser == node {
            return;
        }
        let out = d.suspicion.accuse(alert.suspect, Evidence::Alert { accuser: alert.accuser }, now);
        if out.newly_isolated {
            self.stats.isolations += 1;
            n.cache.invalidate_node(alert.suspect);
        }
        if flood && d.relayed_alerts.insert((alert.accuser, alert.suspect)) {
            self.transmit(eng, node, Destination::Broadcast, Packet::Alert(alert), Duration::ZERO, PacketEvent::Fwd);
        }
    }

    // ---- delivery dispatch, mobility, snapshots ----

    fn on_deliver(&mut self, eng: &mut Engine<WorldEvent>, from: NodeId, to: NodeId, packet: Packet) -> Step {
        self.net.delivered(from);
        if matches!(packet, Packet::Data(_)) {
            self.data_in_air -= 1;
        }
        self.tracer.packet(eng.now(), PacketEvent::Recv, &packet, from, Some(to));
        match packet {
            Packet::Rreq(r) => self.on_rreq(eng, from, to, r),
            Packet::Rrep(r) => self.on_rrep(eng, to, r),
            Packet::Data(p) => self.on_data(eng, to, p),
            Packet::Probe(p) => self.on_probe(eng, to, p),
            Packet::ProbeAck(a) => self.on_probe_ack(eng, to, a),
            Packet::Alert(a) => {
                self.on_alert(eng, to, a);
                Ok(())
            }
        }
    }

    fn on_waypoint(&mut self, eng: &mut Engine<WorldEvent>, node: NodeId) {
        let now = eng.now();
        if let Some(leg) = self.net.advance_waypoint(node, now, &mut self.rngs.mobility) {
            self.tracer.mobility(now, node, leg.origin.x, leg.origin.y);
            if leg.pause_until < self.end {
                eng.schedule(leg.pause_until, WorldEvent::Waypoint { node })
                    .expect("legs end in the future");
            }
        }
    }

    fn on_snapshot(&mut self, eng: &mut Engine<WorldEvent>) {
        self.snapshots.push(Snapshot {
            t: eng.now(),
            originated: self.ledger.originated(),
            received: self.ledger.received(),
            dropped: self.ledger.dropped(),
        });
        if let Some(iv) = self.cfg.metrics.snapshot_interval {
            let at = eng.now() + secs(iv);
            if at <= self.end {
                eng.schedule(at, WorldEvent::Snapshot).expect("future");
            }
        }
    }
}

/// Builds and runs one world without traces.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<RunOutput, RunError> {
    World::new(cfg, Tracer::disabled())?.run()
}
