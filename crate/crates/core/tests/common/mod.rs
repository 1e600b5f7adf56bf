//! Shared fixtures for the integration suites: straight-line oracles, the
//! reference scenarios, and property checks reused by the acceptance run.
#![allow(dead_code, clippy::field_reassign_with_default)]

use std::collections::BTreeSet;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use aisdsr::defense::{
    infection_probability, route_fitness, score_candidates, secure_score, select_route, Evidence, RouteCandidate,
    SuspicionTable, Thresholds, PROBES_PER_ROUTE,
};
use aisdsr::metrics::{
    avg_end_to_end_delay, drop_packet_ratio, packet_loss_ratio, throughput, DropCause, LossAccounting, MetricsLedger,
    MetricsReport,
};
use aisdsr::net::{Area, LinkModel, NetModel, Position};
use aisdsr::packet::{FlowId, NodeId, RouteRecord};
use aisdsr::sim::{Engine, EventKind, SimTime};
use aisdsr::trace::{Channel, Tracer};
use aisdsr::world::{RunOutput, World};
use aisdsr::{ScenarioConfig, Variant};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

pub const TOL: f64 = 1e-9;

/// `|a - b| <= tol * max(|a|, |b|)`.
pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

pub fn opt_close(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => rel_close(x, y, TOL),
        _ => false,
    }
}

// ---- straight-line oracles ----

pub fn oracle_fitness(hop: u32, max_hop: u32, iter: u32, max_iter: u32) -> f64 {
    hop as f64 / max_hop as f64 + max_iter as f64 / iter as f64
}

pub fn oracle_score(p: f64, fitness: f64) -> f64 {
    fitness - p * fitness
}

pub fn oracle_pbh(failures: u8) -> f64 {
    failures as f64 / 3.0
}

/// One data packet's fate in a synthetic ledger.
#[derive(Clone, Debug)]
pub enum Fate {
    Received(u64),
    Dropped(u64, DropCause),
    InFlight,
}

#[derive(Clone, Debug)]
pub struct SynthPacket {
    pub flow: u32,
    pub seq: u64,
    pub sent_us: u64,
    pub bytes: u32,
    pub fate: Fate,
}

pub fn synth_packets() -> impl Strategy<Value = Vec<SynthPacket>> {
    let cause = prop_oneof![
        Just(DropCause::Blackhole),
        Just(DropCause::Link),
        Just(DropCause::Buffer),
        Just(DropCause::NoRoute),
    ];
    let fate = prop_oneof![
        (0u64..2_000_000).prop_map(Fate::Received),
        ((0u64..2_000_000), cause).prop_map(|(d, c)| Fate::Dropped(d, c)),
        Just(Fate::InFlight),
    ];
    prop::collection::vec((0u32..4, 0u64..50_000_000, 1u32..2000, fate), 0..60).prop_map(|raw| {
        raw.into_iter()
            .enumerate()
            .map(|(i, (flow, sent_us, bytes, fate))| SynthPacket {
                flow,
                seq: i as u64,
                sent_us,
                bytes,
                fate,
            })
            .collect()
    })
}

/// Replays synthetic packets into a ledger in global time order.
pub fn ledger_from(packets: &[SynthPacket]) -> MetricsLedger {
    let mut events: Vec<(u64, u8, usize)> = Vec::new();
    for (i, p) in packets.iter().enumerate() {
        events.push((p.sent_us, 0, i));
        match p.fate {
            Fate::Received(d) | Fate::Dropped(d, _) => events.push((p.sent_us + d, 1, i)),
            Fate::InFlight => {}
        }
    }
    events.sort();
    let mut l = MetricsLedger::new();
    for (t, kind, i) in events {
        let p = &packets[i];
        let (f, at) = (FlowId(p.flow), SimTime::from_micros(t));
        let res = match (kind, &p.fate) {
            (0, _) => l.send(f, p.seq, at, p.bytes),
            (_, Fate::Received(_)) => l.receive(f, p.seq, at),
            (_, Fate::Dropped(_, c)) => l.drop_packet(f, p.seq, at, *c),
            _ => unreachable!(),
        };
        res.expect("synthetic ledger is well formed");
    }
    l
}

pub struct OracleMetrics {
    pub pdr: Option<f64>,
    pub throughput_bps: f64,
    pub delay_ms: Option<f64>,
    pub plr: Option<f64>,
    pub dpr: Option<f64>,
}

pub fn oracle_metrics(packets: &[SynthPacket], duration: f64, strict: bool) -> OracleMetrics {
    let mut sent = 0u64;
    let mut received = 0u64;
    let mut dropped = 0u64;
    let mut in_flight = 0u64;
    let mut bytes = 0u64;
    let mut delay_sum = 0.0;
    for p in packets {
        sent += 1;
        match p.fate {
            Fate::Received(d) => {
                received += 1;
                bytes += p.bytes as u64;
                delay_sum += d as f64 / 1000.0;
            }
            Fate::Dropped(..) => dropped += 1,
            Fate::InFlight => in_flight += 1,
        }
    }
    let basis = if strict { sent } else { sent - in_flight };
    OracleMetrics {
        pdr: if basis == 0 { None } else { Some(received as f64 / basis as f64) },
        throughput_bps: bytes as f64 * 8.0 / duration,
        delay_ms: if received == 0 { None } else { Some(delay_sum / received as f64) },
        plr: if basis == 0 {
            None
        } else {
            Some(100.0 * (basis - received) as f64 / basis as f64)
        },
        dpr: if dropped + sent == 0 {
            None
        } else {
            Some(100.0 * dropped as f64 / (dropped + sent) as f64)
        },
    }
}

/// Compares every metric operation with the oracle for one synthetic ledger.
pub fn check_metrics(packets: &[SynthPacket], duration: f64) -> Result<(), String> {
    let ledger = ledger_from(packets);
    for strict in [false, true] {
        let acc = if strict { LossAccounting::Strict } else { LossAccounting::ExcludeInFlight };
        let o = oracle_metrics(packets, duration, strict);
        let tp = throughput(&ledger, duration, acc);
        if !opt_close(tp.pdr, o.pdr) {
            return Err(format!("pdr {:?} vs oracle {:?}", tp.pdr, o.pdr));
        }
        if !rel_close(tp.throughput_bps, o.throughput_bps, TOL) {
            return Err(format!("throughput {} vs oracle {}", tp.throughput_bps, o.throughput_bps));
        }
        if !opt_close(packet_loss_ratio(&ledger, acc), o.plr) {
            return Err(format!("plr {:?} vs oracle {:?}", packet_loss_ratio(&ledger, acc), o.plr));
        }
        let avg = avg_end_to_end_delay(&ledger);
        if !opt_close(avg, o.delay_ms) {
            return Err(format!("delay {avg:?} vs oracle {:?}", o.delay_ms));
        }
        if !opt_close(drop_packet_ratio(&ledger), o.dpr) {
            return Err(format!("dpr {:?} vs oracle {:?}", drop_packet_ratio(&ledger), o.dpr));
        }
    }
    Ok(())
}

pub fn candidate(route: Vec<u32>, iter: u32, failures: u8) -> RouteCandidate {
    let r = RouteRecord::new(route.into_iter().map(NodeId).collect()).expect("simple route");
    let replier = r.last();
    let mut c = RouteCandidate::new(r, replier, iter);
    c.probe_failures = failures;
    c.probe_successes = PROBES_PER_ROUTE - failures;
    c
}

/// Compares fitness, score and infection probability with the oracles.
pub fn check_formulas(hop: u32, max_hop: u32, iter: u32, max_iter: u32, failures: u8, fitness: f64) -> Result<(), String> {
    let fr = route_fitness(hop, max_hop, iter, max_iter).map_err(|e| e.to_string())?;
    let want = oracle_fitness(hop, max_hop, iter, max_iter);
    if !rel_close(fr, want, TOL) {
        return Err(format!("fitness({hop},{max_hop},{iter},{max_iter}) = {fr}, oracle {want}"));
    }
    let c = candidate((0..=hop).collect(), iter, failures);
    let p = infection_probability(&c).map_err(|e| e.to_string())?;
    if !rel_close(p, oracle_pbh(failures), TOL) {
        return Err(format!("p_bh for {failures} failures = {p}"));
    }
    let s = secure_score(p, fitness);
    if !rel_close(s, oracle_score(p, fitness), TOL) {
        return Err(format!("score({p}, {fitness}) = {s}, oracle {}", oracle_score(p, fitness)));
    }
    Ok(())
}

/// Valid argument tuples: 1 <= hop <= max_hop, 1 <= iter <= max_iter.
pub fn formula_inputs() -> impl Strategy<Value = (u32, u32, u32, u32, u8, f64)> {
    (1u32..40, 1u32..40, 0u8..=3, 0.0f64..50.0).prop_flat_map(|(max_hop, max_iter, f, fit)| {
        (1..=max_hop, Just(max_hop), 1..=max_iter, Just(max_iter), Just(f), Just(fit))
    })
}

// ---- reference scenarios ----

/// A(0) - B(1) - M(2) to the east; A - C1(3) - C2(4) - C3(5) - D(6) to the
/// north. One flow A -> D; M is the attacker.
pub fn line_config(variant: Variant) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.variant = variant;
    c.seed = 1;
    c.duration = 12.0;
    c.network.node_count = 7;
    c.network.positions = Some(vec![
        [0.0, 0.0],
        [200.0, 0.0],
        [400.0, 0.0],
        [0.0, 200.0],
        [0.0, 400.0],
        [0.0, 600.0],
        [0.0, 800.0],
    ]);
    c.mobility.pause_time = c.duration;
    c.traffic.pairs = Some(vec![[0, 6]]);
    c.traffic.start = 1.0;
    c.traffic.start_jitter = 0.0;
    c.traffic.stop = Some(10.0);
    c.attack.ids = Some(vec![2]);
    c
}

/// 50 nodes on 500 x 500 m, 5 attackers, 10 CBR flows at 4 pkt/s x 512 B,
/// 100 s, pause times {0, 50, 100}, seeds 1..=10.
pub fn desk_config() -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.duration = 100.0;
    c.network.node_count = 50;
    c.network.width = 500.0;
    c.network.height = 500.0;
    c.traffic.flows = 10;
    c.traffic.rate = 4.0;
    c.traffic.payload = 512;
    c.attack.count = 5;
    c.sweep.pause_times = vec![0.0, 50.0, 100.0];
    c.sweep.seeds = 10;
    c
}

#[derive(Clone, Default)]
pub struct SharedBuf(pub Arc<Mutex<Vec<u8>>>);

impl SharedBuf {
    pub fn text(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap()
    }

    pub fn json_lines(&self) -> Vec<serde_json::Value> {
        self.text()
            .lines()
            .map(|l| serde_json::from_str(l).expect("valid json line"))
            .collect()
    }
}

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

pub struct Traced {
    pub out: RunOutput,
    pub packets: SharedBuf,
    pub defense: SharedBuf,
    pub mobility: SharedBuf,
}

pub fn run_traced(cfg: &ScenarioConfig) -> Traced {
    let packets = SharedBuf::default();
    let defense = SharedBuf::default();
    let mobility = SharedBuf::default();
    let tracer = Tracer::disabled()
        .with(Channel::Packets, Box::new(packets.clone()))
        .with(Channel::Defense, Box::new(defense.clone()))
        .with(Channel::Mobility, Box::new(mobility.clone()));
    let out = World::new(cfg, tracer).expect("valid config").run().expect("run succeeds");
    Traced {
        out,
        packets,
        defense,
        mobility,
    }
}

pub fn route_of(v: &serde_json::Value) -> Option<Vec<u32>> {
    v.get("route")?
        .as_array()
        .map(|a| a.iter().map(|x| x.as_u64().unwrap() as u32).collect())
}

// ---- property checks, shared by the invariant suite and acceptance ----

pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config::with_cases(cases), TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

#[derive(Debug, Clone)]
struct Tick(u32);

impl EventKind for Tick {
    fn kind(&self) -> &'static str {
        "tick"
    }
}

/// (offset from the current clock in us, pop after scheduling, cancel one).
pub fn schedule_ops() -> impl Strategy<Value = Vec<(u64, bool, bool)>> {
    prop::collection::vec((0u64..50, any::<bool>(), any::<bool>()), 1..200)
}

/// Pops come out in nondecreasing `(time, seq)` order, cancelled events never
/// fire, the clock never runs backwards and past scheduling is refused.
pub fn check_scheduler(ops: &[(u64, bool, bool)]) -> Result<(), TestCaseError> {
    let mut eng: Engine<Tick> = Engine::new();
    let mut handles = Vec::new();
    let mut cancelled = BTreeSet::new();
    let mut popped: Vec<(SimTime, u64)> = Vec::new();
    for (i, &(offset, pop, cancel)) in ops.iter().enumerate() {
        let now = eng.now();
        if now > SimTime::ZERO {
            let past = SimTime::from_micros(now.as_micros() - 1);
            prop_assert!(eng.schedule(past, Tick(u32::MAX)).is_err());
        }
        let at = SimTime::from_micros(now.as_micros() + offset);
        handles.push(eng.schedule(at, Tick(i as u32)).unwrap());
        if cancel {
            let h = handles[i / 2];
            if eng.cancel(h) {
                cancelled.insert(h.seq());
            }
        }
        if pop {
            if let Some(ev) = eng.pop_due(SimTime::MAX) {
                prop_assert_eq!(eng.now(), ev.fire_at);
                popped.push((ev.fire_at, ev.seq));
            }
        }
        prop_assert!(eng.now() >= now);
    }
    while let Some(ev) = eng.pop_due(SimTime::MAX) {
        popped.push((ev.fire_at, ev.seq));
    }
    for w in popped.windows(2) {
        prop_assert!(w[0] < w[1], "out of order: {:?}", w);
    }
    for (_, seq) in &popped {
        prop_assert!(!cancelled.contains(seq));
    }
    prop_assert_eq!(popped.len() + cancelled.len(), ops.len());
    Ok(())
}

pub fn positions() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0f64..600.0, 0.0f64..600.0), 2..25)
}

pub fn check_neighbors(pts: &[(f64, f64)]) -> Result<(), TestCaseError> {
    let area = Area {
        width: 600.0,
        height: 600.0,
    };
    let ps: Vec<Position> = pts.iter().map(|&(x, y)| Position::new(x, y)).collect();
    let net = NetModel::with_static_positions(area, LinkModel::default(), &ps);
    let t = SimTime::from_millis(5);
    for i in 0..ps.len() {
        let got: BTreeSet<u32> = net.neighbors(NodeId(i as u32), t).into_iter().map(|n| n.0).collect();
        let want: BTreeSet<u32> = (0..ps.len())
            .filter(|&j| j != i && ((ps[i].x - ps[j].x).powi(2) + (ps[i].y - ps[j].y).powi(2)).sqrt() <= 250.0)
            .map(|j| j as u32)
            .collect();
        prop_assert_eq!(&got, &want);
        for &j in &got {
            prop_assert!(net.neighbors(NodeId(j), t).contains(&NodeId(i as u32)));
        }
    }
    Ok(())
}

/// Small randomized worlds: (seed, variant, nodes, pause, loss, flows, attackers).
pub fn small_worlds() -> impl Strategy<Value = (u64, usize, usize, f64, f64, usize, usize)> {
    (any::<u64>(), 0usize..4, 6usize..18, 0.0f64..12.0, 0.0f64..0.2, 1usize..4, 0usize..3)
}

pub fn small_world_config(p: &(u64, usize, usize, f64, f64, usize, usize)) -> ScenarioConfig {
    let &(seed, variant, nodes, pause, loss, flows, attackers) = p;
    let mut c = ScenarioConfig::default();
    c.seed = seed;
    c.variant = Variant::ALL[variant];
    c.duration = 10.0;
    c.network.node_count = nodes;
    c.network.width = 450.0;
    c.network.height = 450.0;
    c.network.loss_prob = loss;
    c.mobility.pause_time = pause;
    c.traffic.flows = flows;
    c.traffic.rate = 5.0;
    // Never more attackers than nodes outside the flow endpoints.
    c.attack.count = attackers.min(nodes - 2 * flows);
    c.routing.send_buffer = 16;
    c
}

/// Conservation, simple routes, sink accounting, the p_bh lattice and
/// pdr/plr complementarity on one simulated run.
pub fn check_world(p: &(u64, usize, usize, f64, f64, usize, usize)) -> Result<(), TestCaseError> {
    let cfg = small_world_config(p);
    let t = run_traced(&cfg);
    let r = &t.out.report;
    prop_assert_eq!(r.originated, r.received + r.dropped + r.in_flight);
    prop_assert_eq!(t.out.sinks.total_data(), t.out.ledger.dropped_by(DropCause::Blackhole));
    for line in t.packets.json_lines() {
        if let Some(route) = route_of(&line) {
            let set: BTreeSet<u32> = route.iter().copied().collect();
            prop_assert_eq!(set.len(), route.len(), "repeated node in {:?}", route);
        }
    }
    for d in t.defense.json_lines() {
        for c in d["candidates"].as_array().unwrap() {
            let p = c["p_bh"].as_f64().unwrap();
            prop_assert!(on_lattice(p), "p_bh {}", p);
        }
    }
    if let (Some(pdr), Some(plr)) = (r.pdr, r.plr_percent) {
        prop_assert!((pdr + plr / 100.0 - 1.0).abs() <= TOL);
    }
    Ok(())
}

pub fn on_lattice(p: f64) -> bool {
    (0..=3).any(|k| p == k as f64 / 3.0)
}

/// Static, attacker-free, lossless: every data route is a path in the
/// connectivity graph and every packet between connected endpoints arrives.
pub fn static_worlds() -> impl Strategy<Value = (u64, usize, usize)> {
    (any::<u64>(), 4usize..20, 1usize..4)
}

pub fn check_static_delivery(p: &(u64, usize, usize)) -> Result<(), TestCaseError> {
    let &(seed, nodes, flows) = p;
    let mut c = ScenarioConfig::default();
    c.seed = seed;
    c.variant = Variant::DsrBaseline;
    c.duration = 6.0;
    c.network.node_count = nodes;
    c.network.width = 400.0;
    c.network.height = 400.0;
    c.mobility.pause_time = c.duration;
    c.traffic.flows = flows;
    c.traffic.stop = Some(4.0);
    c.attack.count = 0;
    let t = run_traced(&c);

    let mut ps = vec![(0.0, 0.0); nodes];
    for line in t.mobility.json_lines() {
        ps[line["node"].as_u64().unwrap() as usize] = (line["x"].as_f64().unwrap(), line["y"].as_f64().unwrap());
    }
    let connected = |a: u32, b: u32| {
        let (pa, pb) = (ps[a as usize], ps[b as usize]);
        ((pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2)).sqrt() <= 250.0
    };
    let reachable = |s: u32, d: u32| {
        let mut seen = BTreeSet::from([s]);
        let mut frontier = vec![s];
        while let Some(u) = frontier.pop() {
            for v in 0..nodes as u32 {
                if connected(u, v) && seen.insert(v) {
                    frontier.push(v);
                }
            }
        }
        seen.contains(&d)
    };
    for line in t.packets.json_lines() {
        if line["kind"] == "data" {
            let route = route_of(&line).unwrap();
            for w in route.windows(2) {
                prop_assert!(connected(w[0], w[1]), "route {:?} uses a missing link", route);
            }
        }
    }
    let r = &t.out.report;
    let lost: u64 = t.out.flows.iter().filter(|f| !reachable(f.source.0, f.dest.0)).count() as u64;
    if lost == 0 {
        prop_assert_eq!(r.in_flight, 0);
        prop_assert_eq!(r.pdr, Some(1.0));
    } else {
        prop_assert_eq!(r.drops_by_cause.values().sum::<u64>(), r.dropped);
    }
    Ok(())
}

pub fn candidate_sets() -> impl Strategy<Value = (Vec<(u32, u32, u8)>, f64)> {
    (prop::collection::vec((1u32..8, 1u32..12, 0u8..=3), 1..8), 0.01f64..100.0)
}

/// Scaling every fitness by c > 0 leaves the selection unchanged.
pub fn check_argmax_invariance(spec: &(Vec<(u32, u32, u8)>, f64)) -> Result<(), TestCaseError> {
    let (raw, scale) = spec;
    let mut cands: Vec<RouteCandidate> = raw
        .iter()
        .enumerate()
        .map(|(i, &(hops, iter, f))| {
            // Distinct simple routes 0 -> ... -> 999 through private relays.
            let mut r = vec![0u32];
            r.extend((1..hops).map(|k| 1000 + 100 * i as u32 + k));
            r.push(999);
            candidate(r, iter, f)
        })
        .collect();
    score_candidates(&mut cands).unwrap();
    let before = select_route(&cands, 0.5, |_| false);
    for c in cands.iter_mut() {
        c.fitness *= scale;
        c.secure_score = secure_score(c.p_bh, c.fitness);
    }
    let after = select_route(&cands, 0.5, |_| false);
    prop_assert_eq!(before.chosen, after.chosen);
    if let Some(i) = after.chosen {
        prop_assert!(cands[i].p_bh <= 0.5);
    }
    Ok(())
}

pub fn accusations() -> impl Strategy<Value = Vec<(u32, u8, u32)>> {
    prop::collection::vec((0u32..6, 0u8..3, 0u32..6), 1..80)
}

pub fn check_isolation_monotone(ops: &[(u32, u8, u32)]) -> Result<(), TestCaseError> {
    let th = Thresholds::default();
    let mut t = SuspicionTable::new(NodeId(0), th);
    let mut isolated: BTreeSet<NodeId> = BTreeSet::new();
    for (i, &(suspect, kind, accuser)) in ops.iter().enumerate() {
        let ev = match kind {
            0 => Evidence::Direct,
            1 => Evidence::Alert { accuser: NodeId(accuser) },
            _ => Evidence::Detector,
        };
        t.accuse(NodeId(suspect), ev, SimTime::from_micros(i as u64));
        let now: BTreeSet<NodeId> = t.isolated().collect();
        prop_assert!(isolated.is_subset(&now), "un-isolated: {:?} -> {:?}", isolated, now);
        for n in &now {
            let e = t.entry(*n).unwrap();
            let need = if e.direct { th.direct } else { th.hearsay };
            prop_assert!(e.suspicion_count >= need);
        }
        prop_assert!(!t.is_isolated(NodeId(0)));
        isolated = now;
    }
    Ok(())
}

pub fn pbh_inputs() -> impl Strategy<Value = u8> {
    0u8..=3
}

pub fn check_pbh(failures: u8) -> Result<(), TestCaseError> {
    let p = infection_probability(&candidate(vec![0, 1], 1, failures)).unwrap();
    prop_assert!(on_lattice(p));
    Ok(())
}

pub fn check_complement(packets: &[SynthPacket]) -> Result<(), TestCaseError> {
    let l = ledger_from(packets);
    for acc in [LossAccounting::ExcludeInFlight, LossAccounting::Strict] {
        let r = MetricsReport::from_ledger(&l, 10.0, acc);
        prop_assert_eq!(r.originated, r.received + r.dropped + r.in_flight);
        match (r.pdr, r.plr_percent) {
            (Some(p), Some(q)) => prop_assert!((p + q / 100.0 - 1.0).abs() <= TOL),
            (None, None) => {}
            other => prop_assert!(false, "one of pdr/plr absent: {:?}", other),
        }
    }
    Ok(())
}
