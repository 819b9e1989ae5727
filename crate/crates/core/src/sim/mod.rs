//! Discrete-event simulation: nodes joined by shared half-duplex links,
//! producer and consumer applications, and the control plane that places
//! operators when a coordinator asks for it.

mod apps;
mod scenario;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use rustc_hash::FxHasher;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::cep::{parse_sub_name, sub_name, PlanCache, PlanNode};
use crate::metrics::{LinkReport, MetricsReport};
use crate::naming::{Name, Packet, PacketType};
use crate::node::{ControlRequest, Frame, NodeEngine};
use crate::placement::{get_node_status, PlacementRequest, Placer, Terminal};
use crate::query::{query_of_name, OpKind};
use crate::tables::FaceId;
use crate::topology::Role;
use crate::SimTime;

use apps::{Consumer, Producer};
pub use scenario::{ConfigError, Mode, ProducerSpec, QuerySpec, Scenario};

const PURGE_EVERY: SimTime = 1_000_000;
const SETTLE: SimTime = 3_000_000;
const MIN_BUFFER: usize = 64;

#[derive(Debug)]
enum Event {
    Arrive {
        node: usize,
        face: FaceId,
        frame: Frame,
    },
    LinkFree {
        link: usize,
    },
    Generate {
        p: usize,
    },
    Release {
        p: usize,
    },
    Manage {
        p: usize,
    },
    Start {
        q: usize,
    },
    Stop {
        q: usize,
    },
    Poll {
        q: usize,
        s: usize,
    },
    Purge,
}

/// Pending events ordered by time, then by scheduling order. Payloads live
/// in a slab so the heap only moves small keys.
#[derive(Debug, Default)]
struct Agenda {
    heap: BinaryHeap<Reverse<(SimTime, u64, u32)>>,
    slab: Vec<Option<Event>>,
    free: Vec<u32>,
    seq: u64,
}

impl Agenda {
    fn push(&mut self, time: SimTime, ev: Event) {
        let slot = match self.free.pop() {
            Some(i) => {
                self.slab[i as usize] = Some(ev);
                i
            }
            None => {
                self.slab.push(Some(ev));
                (self.slab.len() - 1) as u32
            }
        };
        self.seq += 1;
        self.heap.push(Reverse((time, self.seq, slot)));
    }

    fn pop(&mut self) -> Option<(SimTime, Event)> {
        let Reverse((time, _, slot)) = self.heap.pop()?;
        self.free.push(slot);
        Some((
            time,
            self.slab[slot as usize]
                .take()
                .expect("scheduled slots are filled"),
        ))
    }
}

/// One shared FIFO per link; both directions queue behind each other.
#[derive(Debug)]
struct Link {
    name: String,
    ends: [(usize, FaceId); 2],
    delay: SimTime,
    tx_us: f64,
    buffer: usize,
    queue: VecDeque<(usize, Frame)>,
    busy: bool,
    free_at: f64,
    stats: LinkReport,
}

/// One line of the optional packet trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRow {
    pub time: SimTime,
    pub node: String,
    pub packet_type: &'static str,
    pub name: String,
    pub action: &'static str,
}

pub struct Simulator {
    sc: Scenario,
    now: SimTime,
    agenda: Agenda,
    ids: Vec<String>,
    index: BTreeMap<String, usize>,
    nodes: Vec<NodeEngine>,
    face_links: Vec<BTreeMap<FaceId, usize>>,
    links: Vec<Link>,
    producers: Vec<Producer>,
    producer_at: BTreeMap<(usize, String), usize>,
    consumers: Vec<Consumer>,
    plans: PlanCache,
    placer: Placer,
    placements: Vec<serde_json::Value>,
    placement_errors: u64,
    event_drops: u64,
    events: u64,
    end: SimTime,
    hasher: Sha256,
    hash_buf: Vec<u8>,
    trace: Option<Vec<TraceRow>>,
}

impl std::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Simulator")
            .field("now", &self.now)
            .field("events", &self.events)
            .finish()
    }
}

impl Simulator {
    pub fn new(sc: Scenario) -> Result<Self, ConfigError> {
        let topo = &sc.topology;
        let ids: Vec<String> = topo.nodes.iter().map(|n| n.id.clone()).collect();
        let index: BTreeMap<String, usize> = ids
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        let feedback_rate = 1e6 / sc.management_period as f64;
        let mut nodes = Vec::new();
        let mut face_links = Vec::new();
        for id in &ids {
            let adj = topo.neighbors(id);
            let caps: Vec<(FaceId, f64)> = adj
                .iter()
                .map(|a| (a.face, topo.links[a.link].capacity))
                .collect();
            let consumer_faces: BTreeSet<FaceId> = adj
                .iter()
                .filter(|a| topo.node(&a.peer).is_some_and(|n| n.role == Role::Consumer))
                .map(|a| a.face)
                .collect();
            nodes.push(NodeEngine::new(
                id.clone(),
                &caps,
                consumer_faces,
                sc.k,
                feedback_rate,
                sc.params.clone(),
            ));
            face_links.push(adj.iter().map(|a| (a.face, a.link)).collect());
        }
        let links = topo
            .links
            .iter()
            .map(|l| {
                let end = |x: &str, y: &str| {
                    (
                        index[x],
                        topo.face_to(x, y).expect("link endpoints are adjacent"),
                    )
                };
                let bdp = (l.bandwidth * l.delay_us as f64 / 1e6).ceil() as usize;
                Link {
                    name: format!("{}-{}", l.a, l.b),
                    ends: [end(&l.a, &l.b), end(&l.b, &l.a)],
                    delay: l.delay_us,
                    tx_us: 1e6 / l.bandwidth,
                    buffer: bdp.max(MIN_BUFFER),
                    queue: VecDeque::new(),
                    busy: false,
                    free_at: 0.0,
                    stats: LinkReport::default(),
                }
            })
            .collect();

        for p in &sc.producers {
            let source = Name::from_components([p.source.clone()])
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            for (i, id) in ids.iter().enumerate() {
                if *id == p.node {
                    nodes[i].fib.add_route(source.clone(), FaceId::APP);
                } else if let Some(path) = topo.shortest_path(id, &p.node) {
                    let face = topo.face_to(id, &path[1]).expect("paths follow links");
                    nodes[i].fib.add_route(source.clone(), face);
                }
            }
        }

        let mut plans = PlanCache::default();
        let mut consumers = Vec::new();
        let mut recorded = BTreeSet::new();
        for (qi, q) in sc.queries.iter().enumerate() {
            let plan = match q.ast.root.kind() {
                OpKind::Source => None,
                _ => Some(
                    plans
                        .get_or_build(&q.ast)
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                ),
            };
            let c = Consumer::new(qi, index[&q.consumer], q, plan.as_deref(), &sc)?;
            if c.wants_oracle() {
                recorded.extend(q.ast.sources());
            }
            consumers.push(c);
        }
        let pulled: BTreeSet<String> = sc
            .queries
            .iter()
            .filter(|q| q.mode == Mode::Pr)
            .flat_map(|q| q.ast.sources())
            .collect();
        let mut producers = Vec::new();
        let mut producer_at = BTreeMap::new();
        for (i, p) in sc.producers.iter().enumerate() {
            let prod = Producer::new(
                i,
                index[&p.node],
                p,
                &sc,
                recorded.contains(&p.source),
                pulled.contains(&p.source),
            )?;
            producer_at.insert((index[&p.node], p.source.clone()), i);
            producers.push(prod);
        }

        let end = sc.duration + sc.drain + SETTLE;
        let mut sim = Simulator {
            now: 0,
            agenda: Agenda::default(),
            ids,
            index,
            nodes,
            face_links,
            links,
            producers,
            producer_at,
            consumers,
            plans,
            placer: Placer::default(),
            placements: Vec::new(),
            placement_errors: 0,
            event_drops: 0,
            events: 0,
            end,
            hasher: Sha256::new(),
            hash_buf: Vec::with_capacity(1 << 16),
            trace: None,
            sc,
        };
        for q in 0..sim.consumers.len() {
            let at = sim.sc.queries[q].start;
            sim.schedule(at, Event::Start { q });
        }
        sim.schedule(PURGE_EVERY, Event::Purge);
        Ok(sim)
    }

    /// Keeps every handled packet for [`Simulator::trace_rows`].
    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn nodes(&self) -> &[NodeEngine] {
        &self.nodes
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn trace_rows(&self) -> &[TraceRow] {
        self.trace.as_deref().unwrap_or(&[])
    }

    pub fn write_trace(&self, path: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(path)?;
        for r in self.trace_rows() {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// No continuous interests, hosted operators or queued packets remain.
    pub fn is_quiescent(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| !n.pit.has_continuous() && n.cep.is_idle())
            && self.links.iter().all(|l| l.queue.is_empty())
    }

    /// Runs to completion and reports.
    pub fn run(&mut self) -> MetricsReport {
        while let Some((time, event)) = self.agenda.pop() {
            if time > self.end {
                break;
            }
            self.now = time;
            self.events += 1;
            self.dispatch(event);
        }
        self.report()
    }

    fn schedule(&mut self, time: SimTime, event: Event) {
        self.agenda.push(time, event);
    }

    /// Hands a frame from a local application or the control plane to `node`.
    fn inject(&mut self, node: usize, face: FaceId, frame: Frame) {
        let at = self.now + self.sc.processing_delay;
        self.schedule(at, Event::Arrive { node, face, frame });
    }

    fn dispatch(&mut self, ev: Event) {
        match ev {
            Event::Arrive { node, face, frame } => self.arrive(node, face, frame),
            Event::LinkFree { link } => self.link_free(link),
            Event::Generate { p } => {
                let now = self.now;
                let mut fx = apps::Effects::default();
                self.producers[p].generate(now, &mut fx);
                self.apply(fx);
            }
            Event::Release { p } => {
                let mut fx = apps::Effects::default();
                self.producers[p].release_due(self.now, &mut fx);
                self.apply(fx);
            }
            Event::Manage { p } => {
                let mut fx = apps::Effects::default();
                self.producers[p].manage(self.now, &mut fx);
                self.apply(fx);
            }
            Event::Start { q } => {
                let mut fx = apps::Effects::default();
                self.consumers[q].start(self.now, &self.sc, &mut fx);
                self.apply(fx);
            }
            Event::Stop { q } => {
                let mut fx = apps::Effects::default();
                self.consumers[q].stop(&mut fx);
                self.apply(fx);
            }
            Event::Poll { q, s } => {
                let mut fx = apps::Effects::default();
                self.consumers[q].poll(s, self.now, self.sc.duration, &mut fx);
                self.apply(fx);
            }
            Event::Purge => {
                for n in &mut self.nodes {
                    n.pit.purge_expired(self.now);
                }
                if self.now + PURGE_EVERY <= self.end {
                    self.schedule(self.now + PURGE_EVERY, Event::Purge);
                }
            }
        }
    }

    fn apply(&mut self, fx: apps::Effects) {
        for (node, frame) in fx.inject {
            self.inject(node, FaceId::APP, frame);
        }
        for (at, ev) in fx.timers {
            let ev = match ev {
                apps::Timer::Generate(p) => Event::Generate { p },
                apps::Timer::Release(p) => Event::Release { p },
                apps::Timer::Manage(p) => Event::Manage { p },
                apps::Timer::Stop(q) => Event::Stop { q },
                apps::Timer::Poll(q, s) => Event::Poll { q, s },
            };
            self.schedule(at, ev);
        }
    }

    fn arrive(&mut self, node: usize, face: FaceId, frame: Frame) {
        self.record(node, frame.pkt.packet_type, &frame.pkt.name, "recv");
        let out = self.nodes[node].handle(frame, face, self.now);
        for c in self.nodes[node].take_control() {
            match c {
                ControlRequest::Deploy { qname } => self.deploy(node, &qname),
                ControlRequest::Teardown { qname } => {
                    self.placer.forget(&qname);
                }
            }
        }
        for (to, f) in out {
            if to == FaceId::APP {
                self.deliver_to_app(node, f);
            } else if let Some(&l) = self.face_links[node].get(&to) {
                self.send(l, node, f);
            }
        }
    }

    fn send(&mut self, l: usize, from: usize, frame: Frame) {
        let link = &mut self.links[l];
        link.stats.sent += 1;
        let to = if link.ends[0].0 == from { 1 } else { 0 };
        if link.busy && link.queue.len() >= link.buffer {
            link.stats.dropped += 1;
            if carries_event(&frame) {
                self.event_drops += 1;
            }
            let (n, t, name) = (from, frame.pkt.packet_type, frame.pkt.name.clone());
            self.record(n, t, &name, "drop");
            return;
        }
        if link.busy {
            link.queue.push_back((to, frame));
            link.stats.max_queue = link.stats.max_queue.max(link.queue.len());
            return;
        }
        let start = link.free_at.max(self.now as f64);
        self.transmit(l, to, frame, start);
    }

    /// Starts sending `frame`; `start` keeps fractional transmission times
    /// exact while a backlog drains.
    fn transmit(&mut self, l: usize, to: usize, frame: Frame, start: f64) {
        let link = &mut self.links[l];
        link.busy = true;
        let done = start + link.tx_us;
        link.free_at = done;
        let (node, face) = link.ends[to];
        let arrive = done.ceil() as SimTime + link.delay + self.sc.processing_delay;
        link.stats.delivered += 1;
        self.schedule(done.ceil() as SimTime, Event::LinkFree { link: l });
        self.schedule(arrive, Event::Arrive { node, face, frame });
    }

    fn link_free(&mut self, l: usize) {
        match self.links[l].queue.pop_front() {
            Some((to, frame)) => {
                let start = self.links[l].free_at;
                self.transmit(l, to, frame, start)
            }
            None => self.links[l].busy = false,
        }
    }

    fn deliver_to_app(&mut self, node: usize, frame: Frame) {
        self.record(node, frame.pkt.packet_type, &frame.pkt.name, "deliver");
        let mut fx = apps::Effects::default();
        let now = self.now;
        match frame.pkt.packet_type {
            PacketType::AddContinuousInterest | PacketType::RemoveContinuousInterest => {
                let Some(src) = self.source_of(&frame.pkt.name) else {
                    return;
                };
                if let Some(&p) = self.producer_at.get(&(node, src)) {
                    let add = frame.pkt.packet_type == PacketType::AddContinuousInterest;
                    self.producers[p].subscription(&frame.pkt.name, add, now, &mut fx);
                }
            }
            PacketType::Interest if frame.pkt.is_management() => {
                if let Ok(m) = crate::flow::ManagementPacket::from_packet(&frame.pkt) {
                    if let Some(&p) = self.producer_at.get(&(node, m.source.clone())) {
                        self.producers[p].feedback(&m, now, &mut fx);
                    }
                }
            }
            PacketType::Interest => {
                let name = &frame.pkt.name;
                let seq = name.last().parse::<u64>().ok();
                if let (Some(seq), Some(&p)) =
                    (seq, self.producer_at.get(&(node, name.first().to_owned())))
                {
                    self.producers[p].pull(seq, now, &mut fx);
                }
            }
            PacketType::Data | PacketType::DataStream => {
                for c in self.consumers.iter_mut().filter(|c| c.node == node) {
                    c.deliver(&frame, now);
                }
            }
        }
        self.apply(fx);
    }

    /// Source a subscription name reads: the first component, or for a
    /// sub interest the source of its leaf window.
    fn source_of(&mut self, name: &Name) -> Option<String> {
        match parse_sub_name(name) {
            Some((q, id)) => {
                let ast = query_of_name(&q)?.ok()?;
                let plan = self.plans.get_or_build(&ast).ok()?;
                plan.find(id)?.leaf_source().map(str::to_owned)
            }
            None => Some(name.first().to_owned()),
        }
    }

    fn deploy(&mut self, coord: usize, qname: &Name) {
        let Some(Ok(ast)) = query_of_name(qname) else {
            return;
        };
        let Ok(plan) = self.plans.get_or_build(&ast) else {
            self.placement_errors += 1;
            return;
        };
        let topo = &self.sc.topology;
        let coord_id = self.ids[coord].clone();
        let consumer = self.nodes[coord]
            .pit
            .lookup(qname)
            .and_then(|e| e.faces.iter().find_map(|f| topo.peer_of(&coord_id, *f)))
            .map_or(coord_id.clone(), |a| a.peer.clone());
        let sources = ast.sources();
        let producers: BTreeMap<String, String> = self
            .sc
            .producers
            .iter()
            .map(|p| (p.source.clone(), p.node.clone()))
            .collect();
        let Some(producer) = producers.get(&sources[0]) else {
            return;
        };
        let required: f64 = sources
            .iter()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .filter_map(|s| self.sc.producer_of(s).map(|p| p.rate))
            .sum();
        let nodes = &self.nodes;
        let index = &self.index;
        let status = get_node_status(
            topo,
            &consumer,
            &coord_id,
            producer,
            |from, to| {
                let n = &nodes[index[from]];
                topo.face_to(from, to)
                    .and_then(|f| n.ledgers.get(&f))
                    .map_or(f64::INFINITY, |l| l.advertised_for_new_flow())
            },
            &self.sc.down,
        );
        let req = PlacementRequest {
            qname,
            plan: &plan,
            paths: &status.paths,
            required_rate: required,
            producers: &producers,
            topo,
        };
        let decision = match self.placer.place(&req, false) {
            Ok(Some(d)) => d.clone(),
            Ok(None) => return,
            Err(e) => {
                log::warn!("placement of {qname} failed: {e}");
                self.placement_errors += 1;
                return;
            }
        };
        if decision.degraded {
            log::warn!("no path carries {required} events/s for {qname}; using the best available");
        }
        for s in &decision.sub_interests {
            for w in s.route.windows(2) {
                let face = self
                    .sc
                    .topology
                    .face_to(&w[0], &w[1])
                    .expect("routes follow links");
                self.nodes[self.index[&w[0]]]
                    .fib
                    .add_route(s.name.clone(), face);
            }
            let last = self.index[s.route.last().expect("routes are non-empty")];
            let face = match s.terminal {
                Terminal::App => FaceId::APP,
                Terminal::Cep => FaceId::CEP,
            };
            self.nodes[last].fib.add_route(s.name.clone(), face);
            let node: &PlanNode = plan.find(s.plan_id).expect("decisions cover the plan");
            if let Err(e) = self.nodes[self.index[&s.target]].host_operator(qname, node) {
                log::warn!("cannot host {}: {e}", s.name);
                self.placement_errors += 1;
            }
        }
        self.nodes[coord]
            .cep
            .register_root(sub_name(qname, 0), qname.clone());
        for s in &decision.sub_interests {
            let origin = self.index[&s.origin];
            let f = Frame::bare(s.packet(), self.now);
            let at = self.now + self.sc.processing_delay;
            self.schedule(
                at,
                Event::Arrive {
                    node: origin,
                    face: FaceId::CEP,
                    frame: f,
                },
            );
        }
        self.placements
            .push(serde_json::to_value(&decision).expect("decisions serialize"));
    }

    fn record(&mut self, node: usize, t: PacketType, name: &Name, action: &'static str) {
        let b = &mut self.hash_buf;
        b.extend_from_slice(&self.now.to_le_bytes());
        b.extend_from_slice(&(node as u32).to_le_bytes());
        b.push(t.code());
        b.push(action.as_bytes()[0]);
        let mut h = FxHasher::default();
        name.hash(&mut h);
        b.extend_from_slice(&h.finish().to_le_bytes());
        if b.len() >= 1 << 16 {
            self.hasher.update(&*b);
            b.clear();
        }
        if let Some(rows) = &mut self.trace {
            rows.push(TraceRow {
                time: self.now,
                node: self.ids[node].clone(),
                packet_type: t.label(),
                name: name.to_string(),
                action,
            });
        }
    }

    fn report(&mut self) -> MetricsReport {
        self.hasher.update(&self.hash_buf);
        self.hash_buf.clear();
        let trace_hash = hex::encode(self.hasher.clone().finalize());
        let mut queries = Vec::new();
        for c in &self.consumers {
            queries.push(c.report(&self.sc, &self.producers, &self.nodes, &mut self.plans));
        }
        let links = self
            .links
            .iter()
            .map(|l| (l.name.clone(), l.stats.clone()))
            .collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| {
                let mut v = n.counters_json();
                v["engine"] = serde_json::to_value(n.cep.counters).expect("counters serialize");
                (n.id.clone(), v)
            })
            .collect();
        let mut placements = self.placements.clone();
        if self.placement_errors > 0 {
            placements.push(serde_json::json!({ "errors": self.placement_errors }));
        }
        MetricsReport {
            seed: self.sc.seed,
            duration_us: self.sc.duration,
            warmup_us: self.sc.warmup,
            queries,
            links,
            event_drops: self.event_drops,
            nodes,
            placements,
            events_simulated: self.events,
            trace_hash,
        }
    }
}

fn carries_event(f: &Frame) -> bool {
    matches!(f.pkt.packet_type, PacketType::DataStream | PacketType::Data) && !f.pkt.is_management()
}

/// Name of pull request `seq` for `source`.
pub(crate) fn pull_name(source: &str, seq: u64) -> Name {
    Name::from_components([source.to_owned(), seq.to_string()]).expect("source names are valid")
}

pub(crate) fn stream_packet(source: &Arc<str>, seq: u64, payload: bytes::Bytes) -> Packet {
    Packet::data_stream(pull_name(source, seq), payload)
}

/// Loads, runs and reports one scenario.
pub fn run_scenario(sc: Scenario) -> Result<MetricsReport, ConfigError> {
    Ok(Simulator::new(sc)?.run())
}
