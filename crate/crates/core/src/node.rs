//! Per-node forwarding state machine.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use bytes::Bytes;
use rustc_hash::FxHashMap;
use serde::Serialize;

use crate::cep::{
    encode_emission, parse_sub_name, CepEngine, Emission, OrderKey, PlanCache, PlanNode, Produced,
};
use crate::flow::{Direction, FlowKey, FlowLedger, ManagementPacket};
use crate::naming::{EventTuple, Name, Packet, PacketType, DEFAULT_HOP_LIMIT, MAX_PACKET_SIZE};
use crate::query::{query_of_name, validate_with, QueryParams};
use crate::tables::{dump_tables, ContentStore, FaceId, Fib, Pit, Stamp};
use crate::SimTime;

/// Decoded content carried next to a packet so receivers need not parse
/// the payload text again.
#[derive(Debug, Clone)]
pub enum Body {
    Empty,
    Event(OrderKey, Arc<EventTuple>),
    Result(Arc<Emission>),
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub pkt: Packet,
    /// Creation time of the producer event this frame derives from.
    pub born: SimTime,
    pub body: Body,
}

impl Frame {
    pub fn bare(pkt: Packet, born: SimTime) -> Self {
        Frame {
            pkt,
            born,
            body: Body::Empty,
        }
    }
}

/// Pseudo-face: the frame re-enters this node as if it came from the CEP face.
const LOOPBACK: FaceId = FaceId(u32::MAX);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ControlRequest {
    /// A consumer asked this node for a query nobody coordinates yet.
    Deploy { qname: Name },
    /// The last consumer of a coordinated query left.
    Teardown { qname: Name },
}

#[derive(Debug, Default, Clone, Serialize)]
pub struct NodeCounters {
    pub packets_in: BTreeMap<&'static str, u64>,
    pub packets_out: BTreeMap<&'static str, u64>,
    pub dropped_hop_limit: u64,
    pub dropped_interests: u64,
    pub dropped_data: u64,
    pub dropped_streams: u64,
    pub dropped_removes: u64,
    pub discarded_adds: u64,
    pub duplicate_faces: u64,
    pub duplicate_streams: u64,
    pub malformed_queries: u64,
    pub oversize_results: u64,
    pub cs_hits: u64,
    pub cep_invocations: u64,
    pub management_in: u64,
    pub feedback_echoed: u64,
}

impl NodeCounters {
    fn tick(map: &mut BTreeMap<&'static str, u64>, t: PacketType) {
        *map.entry(t.label()).or_default() += 1;
    }
}

#[derive(Debug)]
pub struct NodeEngine {
    pub id: String,
    pub cs: ContentStore,
    pub pit: Pit,
    pub fib: Fib,
    pub cep: CepEngine,
    pub counters: NodeCounters,
    pub ledgers: BTreeMap<FaceId, FlowLedger>,
    consumer_faces: BTreeSet<FaceId>,
    params: QueryParams,
    plans: PlanCache,
    leaf_of: FxHashMap<Name, Option<Arc<str>>>,
    coordinated: BTreeSet<Name>,
    control: Vec<ControlRequest>,
    feedback_rate: f64,
}

impl NodeEngine {
    /// `links` lists each link face with its flow-control capacity.
    /// Management feedback is accounted at `feedback_rate` packets per second.
    pub fn new(
        id: impl Into<String>,
        links: &[(FaceId, f64)],
        consumer_faces: BTreeSet<FaceId>,
        k: u8,
        feedback_rate: f64,
        params: QueryParams,
    ) -> Self {
        NodeEngine {
            id: id.into(),
            cs: ContentStore::default(),
            pit: Pit::default(),
            fib: Fib::new(),
            cep: CepEngine::default(),
            counters: NodeCounters::default(),
            ledgers: links
                .iter()
                .map(|(f, c)| (*f, FlowLedger::new(*c, k)))
                .collect(),
            consumer_faces,
            params,
            plans: PlanCache::default(),
            leaf_of: FxHashMap::default(),
            coordinated: BTreeSet::new(),
            control: Vec::new(),
            feedback_rate,
        }
    }

    pub fn params(&self) -> &QueryParams {
        &self.params
    }

    pub fn take_control(&mut self) -> Vec<ControlRequest> {
        std::mem::take(&mut self.control)
    }

    pub fn coordinates(&self, qname: &Name) -> bool {
        self.coordinated.contains(qname)
    }

    pub fn dump_tables(&self) -> serde_json::Value {
        dump_tables(&self.cs, &self.pit, &self.fib)
    }

    pub fn counters_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.counters).expect("counters serialize")
    }

    /// Installs the operator of `node` for `qname`; the coordinator also
    /// learns which sub-name carries the final result.
    pub fn host_operator(
        &mut self,
        qname: &Name,
        node: &PlanNode,
    ) -> Result<Name, crate::cep::CepError> {
        self.cep.host(qname, node, &self.params)
    }

    /// Processes one arriving frame and everything it triggers locally.
    /// Returns frames leaving on link faces or towards the application.
    pub fn handle(&mut self, frame: Frame, in_face: FaceId, now: SimTime) -> Vec<(FaceId, Frame)> {
        let mut out = Vec::new();
        let mut local = VecDeque::from([(frame, in_face)]);
        while let Some((mut f, face)) = local.pop_front() {
            NodeCounters::tick(&mut self.counters.packets_in, f.pkt.packet_type);
            if face.is_link() {
                if f.pkt.hop_limit == 0 {
                    self.counters.dropped_hop_limit += 1;
                    continue;
                }
                f.pkt.hop_limit -= 1;
            }
            let mut sends = Vec::new();
            match f.pkt.packet_type {
                PacketType::Interest if f.pkt.is_management() => {
                    self.on_management(f, face, &mut sends)
                }
                PacketType::Interest => self.on_interest(f, face, now, &mut sends),
                PacketType::Data => self.on_data(f, face, &mut sends),
                PacketType::AddContinuousInterest => self.on_add(f, face, now, &mut sends),
                PacketType::RemoveContinuousInterest => self.on_remove(f, face, &mut sends),
                PacketType::DataStream => self.on_data_stream(f, face, &mut sends),
            }
            for (to, f) in sends {
                if to == LOOPBACK {
                    local.push_back((f, FaceId::CEP));
                    continue;
                }
                NodeCounters::tick(&mut self.counters.packets_out, f.pkt.packet_type);
                if to == FaceId::CEP {
                    for g in self.on_cep(f) {
                        local.push_back((g, FaceId::CEP));
                    }
                } else {
                    out.push((to, f));
                }
            }
        }
        out
    }

    fn on_interest(
        &mut self,
        f: Frame,
        in_face: FaceId,
        now: SimTime,
        sends: &mut Vec<(FaceId, Frame)>,
    ) {
        let name = f.pkt.name.clone();
        if let Some(e) = self.cs.lookup(&name) {
            self.counters.cs_hits += 1;
            sends.push((in_face, Frame::bare(Packet::data(name, e.data), f.born)));
            return;
        }
        if let Some(e) = self.pit.lookup(&name) {
            if !e.continuous {
                self.pit.add_face(&name, in_face, false, now);
                return;
            }
        }
        let Some(next) = self.fib_face(&name, in_face) else {
            self.counters.dropped_interests += 1;
            return;
        };
        self.pit.add_face(&name, in_face, false, now);
        sends.push((next, f));
    }

    fn on_data(&mut self, f: Frame, in_face: FaceId, sends: &mut Vec<(FaceId, Frame)>) {
        let name = f.pkt.name.clone();
        let Some(e) = self.pit.lookup(&name) else {
            self.counters.dropped_data += 1;
            return;
        };
        let continuous = e.continuous;
        for &face in &e.faces {
            if face != in_face || !face.is_link() {
                sends.push((face, f.clone()));
            }
        }
        if !continuous {
            self.pit.remove(&name);
            let ts = match &f.body {
                Body::Event(k, _) => k.ts,
                Body::Result(e) => e.key.ts,
                Body::Empty => 0,
            };
            self.cs.insert(name, f.pkt.payload.clone(), ts);
        }
    }

    fn on_add(
        &mut self,
        f: Frame,
        in_face: FaceId,
        now: SimTime,
        sends: &mut Vec<(FaceId, Frame)>,
    ) {
        let name = f.pkt.name.clone();
        let is_sub = parse_sub_name(&name).is_some();
        let query = query_of_name(&name);
        if let Some(q) = &query {
            let ok = match q {
                Ok(ast) => validate_with(ast, &self.params).is_empty(),
                Err(_) => false,
            };
            if !ok {
                self.counters.malformed_queries += 1;
                return;
            }
        }
        if let Some(e) = self.cs.lookup(&name) {
            self.counters.cs_hits += 1;
            sends.push((
                in_face,
                Frame::bare(Packet::data(name.clone(), e.data), f.born),
            ));
            if self.pit.lookup(&name).is_some() {
                self.process_pit(&name, in_face, now);
                return;
            }
        }
        if self.pit.lookup(&name).is_some() {
            self.process_pit(&name, in_face, now);
            return;
        }
        if query.is_some() && !is_sub && self.consumer_faces.contains(&in_face) {
            self.pit.add_face(&name, in_face, true, now);
            if self.coordinated.insert(name.clone()) {
                self.control.push(ControlRequest::Deploy { qname: name });
            }
            return;
        }
        let Some(next) = self.fib_face(&name, in_face) else {
            self.counters.discarded_adds += 1;
            return;
        };
        self.pit.add_face(&name, in_face, true, now);
        sends.push((next, f));
    }

    fn process_pit(&mut self, name: &Name, face: FaceId, now: SimTime) {
        if self
            .pit
            .lookup(name)
            .is_some_and(|e| e.faces.contains(&face))
        {
            self.counters.duplicate_faces += 1;
        } else {
            self.pit.add_face(name, face, true, now);
        }
    }

    fn on_remove(&mut self, f: Frame, in_face: FaceId, sends: &mut Vec<(FaceId, Frame)>) {
        let name = f.pkt.name.clone();
        match self.pit.remove_face(&name, in_face) {
            None => {
                self.counters.dropped_removes += 1;
                return;
            }
            Some(false) => return,
            Some(true) => {}
        }
        if self.coordinated.remove(&name) {
            self.control.push(ControlRequest::Teardown {
                qname: name.clone(),
            });
            let root = crate::cep::sub_name(&name, 0);
            sends.push((LOOPBACK, Frame::bare(Packet::remove_ci(root), f.born)));
            return;
        }
        self.cep.unregister_root(&name);
        if self.cep.hosts(&name) && self.cep.leaf_source(&name).is_some() {
            self.cep.on_remove(&name);
        }
        if let Some(next) = self.fib_face(&name, in_face) {
            sends.push((next, f));
        }
        if parse_sub_name(&name).is_some() {
            self.fib.remove_prefix(&name);
            self.leaf_of.remove(&name);
        }
    }

    fn on_data_stream(&mut self, f: Frame, in_face: FaceId, sends: &mut Vec<(FaceId, Frame)>) {
        let Body::Event(key, tuple) = &f.body else {
            self.counters.dropped_streams += 1;
            return;
        };
        let stream = f.pkt.name.clone();
        let source = stream.first().to_owned();
        let stamp = Stamp::new(key.ts, key.seq);
        let names: Vec<Name> = self.pit.continuous_names().cloned().collect();
        let mut targets = BTreeSet::new();
        let mut matched = false;
        for entry in names {
            if !self.satisfies(&entry, &stream, &source) {
                continue;
            }
            matched = true;
            let e = self.pit.lookup_mut(&entry).expect("listed entries exist");
            if !e.advance(stamp) {
                self.counters.duplicate_streams += 1;
                continue;
            }
            if self.cep.hosts(&entry) {
                self.counters.cep_invocations += 1;
                if let Some(p) =
                    self.cep
                        .process_stream(&entry, key.clone(), EventTuple::clone(tuple))
                {
                    if let Some(g) = self.result_frame(&p, f.born) {
                        sends.push((LOOPBACK, g));
                    }
                }
                continue;
            }
            for &face in &e.faces {
                if face != in_face || !face.is_link() {
                    targets.insert(face);
                }
            }
        }
        if !matched {
            self.counters.dropped_streams += 1;
        }
        for face in targets {
            sends.push((face, f.clone()));
        }
    }

    fn on_management(&mut self, f: Frame, in_face: FaceId, sends: &mut Vec<(FaceId, Frame)>) {
        self.counters.management_in += 1;
        let Ok(m) = ManagementPacket::from_packet(&f.pkt) else {
            self.counters.dropped_interests += 1;
            return;
        };
        let source_name = match Name::from_components([m.source.clone()]) {
            Ok(n) => n,
            Err(_) => {
                self.counters.dropped_interests += 1;
                return;
            }
        };
        if m.direction == Direction::Feedback {
            if let Some(next) = self.fib_face(&source_name, in_face) {
                if let Some(l) = self.ledgers.get_mut(&next) {
                    l.record(FlowKey::Feedback(m.flow_id), self.feedback_rate);
                }
                sends.push((
                    next,
                    Frame::bare(m.to_packet().with_hop_limit(f.pkt.hop_limit), f.born),
                ));
            } else {
                self.counters.dropped_interests += 1;
            }
            return;
        }
        let names: Vec<Name> = self.pit.continuous_names().cloned().collect();
        let mut targets = BTreeSet::new();
        let mut echo = false;
        for entry in names {
            if !self.satisfies(&entry, &source_name, &m.source) {
                continue;
            }
            if self.cep.hosts(&entry) {
                echo = true;
                continue;
            }
            let e = self.pit.lookup(&entry).expect("listed entries exist");
            for &face in &e.faces {
                if face != in_face || !face.is_link() {
                    targets.insert(face);
                }
            }
        }
        for face in targets {
            if face == FaceId::APP {
                echo = true;
                continue;
            }
            let fwd = match self.ledgers.get_mut(&face) {
                Some(l) => l.on_management(&m),
                None => m.clone(),
            };
            sends.push((
                face,
                Frame::bare(fwd.to_packet().with_hop_limit(f.pkt.hop_limit), f.born),
            ));
        }
        if echo {
            self.counters.feedback_echoed += 1;
            let fb = m.into_feedback();
            sends.push((LOOPBACK, Frame::bare(fb.to_packet(), f.born)));
        }
    }

    /// Frames handed to the local operator host. Results come back as new
    /// frames entering from the CEP face.
    fn on_cep(&mut self, f: Frame) -> Vec<Frame> {
        let name = f.pkt.name.clone();
        match (f.pkt.packet_type, &f.body) {
            (PacketType::Data, Body::Result(e)) => {
                if let Some(q) = self.cep.root_query(&name).cloned() {
                    self.cs.insert(q.clone(), f.pkt.payload.clone(), e.key.ts);
                    let pkt = Packet::data(q, f.pkt.payload.clone());
                    return vec![Frame {
                        pkt,
                        born: f.born,
                        body: f.body.clone(),
                    }];
                }
                let produced = self.cep.on_child_data(&name, (**e).clone());
                produced
                    .iter()
                    .filter_map(|p| self.result_frame(p, f.born))
                    .collect()
            }
            (PacketType::RemoveContinuousInterest, _) => self
                .cep
                .on_remove(&name)
                .into_iter()
                .map(|c| Frame::bare(Packet::remove_ci(c), f.born))
                .collect(),
            _ => Vec::new(),
        }
    }

    fn result_frame(&mut self, p: &Produced, born: SimTime) -> Option<Frame> {
        let text = match encode_emission(&p.emission) {
            Ok(t) => t,
            Err(_) => {
                self.counters.oversize_results += 1;
                return None;
            }
        };
        let pkt = Packet::data(p.sub.clone(), Bytes::from(text)).with_hop_limit(DEFAULT_HOP_LIMIT);
        if pkt.wire_len() > MAX_PACKET_SIZE {
            self.counters.oversize_results += 1;
            return None;
        }
        Some(Frame {
            pkt,
            born,
            body: Body::Result(Arc::new(p.emission.clone())),
        })
    }

    fn fib_face(&self, name: &Name, in_face: FaceId) -> Option<FaceId> {
        let e = self.fib.lookup(name)?;
        e.faces
            .iter()
            .copied()
            .find(|f| *f != in_face || !f.is_link())
    }

    /// Whether stream `stream` of `source` feeds PIT entry `entry`: either
    /// the entry names a prefix of the stream, or it is the sub interest of
    /// a leaf window over `source`.
    fn satisfies(&mut self, entry: &Name, stream: &Name, source: &str) -> bool {
        if entry.is_prefix_of(stream) {
            return true;
        }
        self.leaf_source_of(entry).is_some_and(|s| &*s == source)
    }

    fn leaf_source_of(&mut self, entry: &Name) -> Option<Arc<str>> {
        if let Some(s) = self.leaf_of.get(entry) {
            return s.clone();
        }
        let s = parse_sub_name(entry).and_then(|(q, id)| {
            let ast = query_of_name(&q)?.ok()?;
            let plan = self.plans.get_or_build(&ast).ok()?;
            plan.find(id)?.leaf_source().map(Arc::from)
        });
        self.leaf_of.insert(entry.clone(), s.clone());
        s
    }
}
