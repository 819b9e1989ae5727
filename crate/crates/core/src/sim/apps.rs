//! Producer and consumer applications attached to node APP faces.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::sync::Arc;

use bytes::Bytes;

use super::scenario::{ConfigError, Mode, ProducerSpec, QuerySpec, Scenario};
use super::{pull_name, stream_packet};
use crate::cep::{decode_emission, Emission, OrderKey, PlanCache, PlanNode, QueryRuntime};
use crate::flow::{ManagementPacket, ProducerRateState, RateSample};
use crate::ingest::{load_csv, synth_stream_on, SchemaKind, SynthStream};
use crate::metrics::{
    compare_fingerprints, f1_score, loss_rate, summarize, throughput_series, ControlCounts,
    Fingerprint, QueryReport,
};
use crate::naming::{
    decode_tuples_bytes, encode_tuples, EventTuple, Name, Packet, PacketType, Schema, Value,
};
use crate::node::{Body, Frame, NodeEngine};
use crate::oracle::oracle_emissions;
use crate::query::{qname, OpKind};
use crate::SimTime;

/// Events kept for answering pull requests.
const PULL_STORE: SimTime = 8_000_000;
/// Backlog bound of the producer pacer, in seconds of demand.
const BACKLOG_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub(super) enum Timer {
    Generate(usize),
    Release(usize),
    Manage(usize),
    Stop(usize),
    Poll(usize, usize),
}

/// What an application wants done: frames to hand to its node, and timers.
#[derive(Debug, Default)]
pub(super) struct Effects {
    pub inject: Vec<(usize, Frame)>,
    pub timers: Vec<(SimTime, Timer)>,
}

struct Stored {
    seq: u64,
    born: SimTime,
    key: OrderKey,
    tuple: Arc<EventTuple>,
}

pub(super) struct Producer {
    idx: usize,
    node: usize,
    source: Arc<str>,
    kind: SchemaKind,
    schema: Arc<Schema>,
    rate: f64,
    seed: u64,
    duration: SimTime,
    rows: Option<Vec<Vec<Value>>>,
    row: usize,
    gen: Option<SynthStream>,
    next_at: SimTime,
    next: Option<EventTuple>,
    start: SimTime,
    started: bool,
    subs: BTreeSet<Name>,
    seq: u64,
    pub generated: u64,
    pub shed: u64,
    flow: ProducerRateState,
    flow_control: bool,
    pending: VecDeque<(SimTime, OrderKey, Arc<EventTuple>)>,
    next_send: f64,
    release_at: Option<SimTime>,
    managing: bool,
    record: bool,
    pub trace: Vec<(OrderKey, EventTuple)>,
    pull: bool,
    store: VecDeque<Stored>,
    held: BTreeMap<u64, u32>,
    pub rate_samples: Vec<RateSample>,
}

impl Producer {
    pub fn new(
        idx: usize,
        node: usize,
        spec: &ProducerSpec,
        sc: &Scenario,
        record: bool,
        pull: bool,
    ) -> Result<Self, ConfigError> {
        let rows = match &spec.csv {
            Some(path) => {
                let s = load_csv(path, spec.schema)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
                let rows: Vec<Vec<Value>> = s.map(|t| t.values).collect();
                if rows.is_empty() {
                    return Err(ConfigError::Invalid(format!(
                        "{} has no usable rows",
                        path.display()
                    )));
                }
                Some(rows)
            }
            None => None,
        };
        Ok(Producer {
            idx,
            node,
            source: Arc::from(spec.source.as_str()),
            kind: spec.schema,
            schema: spec.schema.schema(),
            rate: spec.rate,
            seed: sc.seed,
            duration: sc.duration,
            rows,
            row: 0,
            gen: None,
            next_at: 0,
            next: None,
            start: 0,
            started: false,
            subs: BTreeSet::new(),
            seq: 0,
            generated: 0,
            shed: 0,
            flow: ProducerRateState::new(idx as u32 + 1, spec.rate, sc.management_period),
            flow_control: sc.flow_control,
            pending: VecDeque::new(),
            next_send: 0.0,
            release_at: None,
            managing: false,
            record,
            trace: Vec::new(),
            pull,
            store: VecDeque::new(),
            held: BTreeMap::new(),
            rate_samples: Vec::new(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    fn begin(&mut self, now: SimTime, fx: &mut Effects) {
        if self.started || now >= self.duration {
            return;
        }
        self.started = true;
        self.start = now;
        self.gen = Some(synth_stream_on(
            self.kind,
            self.rate,
            self.duration - now,
            self.seed,
            self.idx as u64,
        ));
        self.advance(fx);
    }

    fn advance(&mut self, fx: &mut Effects) {
        match self.gen.as_mut().and_then(Iterator::next) {
            Some((t, tuple)) => {
                self.next_at = self.start + t;
                self.next = Some(tuple);
                fx.timers.push((self.next_at, Timer::Generate(self.idx)));
            }
            None => self.next = None,
        }
    }

    pub fn generate(&mut self, now: SimTime, fx: &mut Effects) {
        let Some(mut tuple) = self.next.take() else {
            return;
        };
        tuple.ts = (now / 1000) as i64;
        if let Some(rows) = &self.rows {
            tuple.values = rows[self.row % rows.len()].clone();
            self.row += 1;
        }
        let key = OrderKey {
            ts: tuple.ts,
            source: self.source.clone(),
            seq: self.seq,
        };
        self.seq += 1;
        self.generated += 1;
        if self.record {
            self.trace.push((key.clone(), tuple.clone()));
        }
        let tuple = Arc::new(tuple);
        if !self.subs.is_empty() {
            if (self.pending.len() as f64) < (self.rate * BACKLOG_SECONDS).max(1000.0) {
                self.pending.push_back((now, key.clone(), tuple.clone()));
            } else {
                self.shed += 1;
            }
            self.release(now, fx);
        }
        if self.pull {
            let seq = key.seq;
            self.store.push_back(Stored {
                seq,
                born: now,
                key,
                tuple,
            });
            while self
                .store
                .front()
                .is_some_and(|s| s.born + PULL_STORE < now)
            {
                self.store.pop_front();
            }
            if let Some(n) = self.held.remove(&seq) {
                for _ in 0..n {
                    self.answer(seq, fx);
                }
            }
        }
        self.advance(fx);
    }

    /// Sending rate: the estimate while constrained, otherwise the
    /// allocation so that bursts drain quickly.
    fn pace_rate(&self) -> f64 {
        let f = &self.flow;
        if f.current_estimate < f.desired_rate {
            f.current_estimate
        } else if f.last_allocation.is_finite() {
            f.last_allocation.max(f.current_estimate)
        } else {
            f.desired_rate
        }
    }

    fn payload(&self, tuple: &EventTuple) -> Bytes {
        Bytes::from(
            encode_tuples(&self.schema, std::slice::from_ref(tuple)).expect("schema tuples encode"),
        )
    }

    fn emit(&self, born: SimTime, key: OrderKey, tuple: Arc<EventTuple>, fx: &mut Effects) {
        let pkt = stream_packet(&self.source, key.seq, self.payload(&tuple));
        fx.inject.push((
            self.node,
            Frame {
                pkt,
                born,
                body: Body::Event(key, tuple),
            },
        ));
    }

    fn release(&mut self, now: SimTime, fx: &mut Effects) {
        if !self.flow_control {
            while let Some((born, key, tuple)) = self.pending.pop_front() {
                self.emit(born, key, tuple, fx);
            }
            return;
        }
        if !self.flow.has_feedback() {
            return;
        }
        let rate = self.pace_rate();
        if rate <= 0.0 {
            return;
        }
        let gap = 1e6 / rate;
        let t = now as f64;
        while !self.pending.is_empty() {
            if self.next_send + gap < t {
                self.next_send = t;
            }
            if t < self.next_send {
                let at = self.next_send.ceil() as SimTime;
                if self.release_at.is_none_or(|r| r > at) {
                    self.release_at = Some(at);
                    fx.timers.push((at, Timer::Release(self.idx)));
                }
                return;
            }
            let (born, key, tuple) = self.pending.pop_front().expect("non-empty");
            self.emit(born, key, tuple, fx);
            self.next_send += gap;
        }
    }

    pub fn release_due(&mut self, now: SimTime, fx: &mut Effects) {
        if self.release_at.is_some_and(|r| r <= now) {
            self.release_at = None;
        }
        self.release(now, fx);
    }

    pub fn manage(&mut self, now: SimTime, fx: &mut Effects) {
        if self.subs.is_empty() || !self.flow_control {
            self.managing = false;
            return;
        }
        if let Some(m) = self.flow.emit_management(now) {
            let pkt = m.with_source(&*self.source).to_packet();
            fx.inject.push((self.node, Frame::bare(pkt, now)));
        }
        fx.timers
            .push((self.flow.next_emit(), Timer::Manage(self.idx)));
    }

    pub fn feedback(&mut self, m: &ManagementPacket, now: SimTime, fx: &mut Effects) {
        let estimate = self.flow.on_feedback(m);
        self.rate_samples.push(RateSample {
            time_us: now,
            flow: self.flow.flow_id,
            estimate,
            stamped: m.stamped_rate,
            u_bit: m.u_bit,
        });
        self.release(now, fx);
    }

    pub fn subscription(&mut self, name: &Name, add: bool, now: SimTime, fx: &mut Effects) {
        if add {
            self.subs.insert(name.clone());
            self.begin(now, fx);
            if self.flow_control && !self.managing {
                self.managing = true;
                fx.timers.push((now, Timer::Manage(self.idx)));
            }
        } else {
            self.subs.remove(name);
            if self.subs.is_empty() {
                self.shed += self.pending.len() as u64;
                self.pending.clear();
            }
        }
    }

    pub fn pull(&mut self, seq: u64, now: SimTime, fx: &mut Effects) {
        self.begin(now, fx);
        if seq < self.seq {
            self.answer(seq, fx);
        } else {
            *self.held.entry(seq).or_default() += 1;
        }
    }

    fn answer(&self, seq: u64, fx: &mut Effects) {
        let Some(first) = self.store.front() else {
            return;
        };
        let Some(s) = seq
            .checked_sub(first.seq)
            .and_then(|i| self.store.get(i as usize))
        else {
            return;
        };
        let pkt = Packet::data(pull_name(&self.source, seq), self.payload(&s.tuple));
        fx.inject.push((
            self.node,
            Frame {
                pkt,
                born: s.born,
                body: Body::Event(s.key.clone(), s.tuple.clone()),
            },
        ));
    }
}

pub(super) struct Consumer {
    q: usize,
    pub node: usize,
    qname: Name,
    raw: bool,
    mode: Mode,
    sources: Vec<Arc<str>>,
    poll_gap: Vec<f64>,
    poll_next: Vec<f64>,
    next_seq: Vec<u64>,
    runtime: Option<QueryRuntime>,
    oracle: bool,
    warmup: SimTime,
    duration: SimTime,
    delivered: u64,
    received: BTreeSet<(Arc<str>, u64)>,
    times: Vec<SimTime>,
    latency: Vec<f64>,
    prints: Vec<Fingerprint>,
    last_key: Option<OrderKey>,
    fifo: u64,
    dups: u64,
    control: ControlCounts,
}

impl Consumer {
    pub fn new(
        q: usize,
        node: usize,
        spec: &QuerySpec,
        plan: Option<&PlanNode>,
        sc: &Scenario,
    ) -> Result<Self, ConfigError> {
        let raw = spec.ast.root.kind() == OpKind::Source;
        let mut sources: Vec<Arc<str>> = Vec::new();
        for s in spec.ast.sources() {
            if !sources.iter().any(|x| **x == *s) {
                sources.push(Arc::from(s.as_str()));
            }
        }
        let poll_gap = sources
            .iter()
            .map(|s| {
                1e6 / spec
                    .poll_rate
                    .or_else(|| sc.producer_of(s).map(|p| p.rate))
                    .unwrap_or(1.0)
            })
            .collect();
        let runtime = match plan {
            Some(plan) if spec.mode == Mode::Pr => Some(
                QueryRuntime::new(plan, &sc.params)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            _ => None,
        };
        Ok(Consumer {
            q,
            node,
            qname: qname(&spec.ast),
            raw,
            mode: spec.mode,
            poll_next: vec![0.0; sources.len()],
            next_seq: vec![0; sources.len()],
            sources,
            poll_gap,
            runtime,
            oracle: spec.accuracy && !raw,
            warmup: sc.warmup,
            duration: sc.duration,
            delivered: 0,
            received: BTreeSet::new(),
            times: Vec::new(),
            latency: Vec::new(),
            prints: Vec::new(),
            last_key: None,
            fifo: 0,
            dups: 0,
            control: ControlCounts::default(),
        })
    }

    pub fn wants_oracle(&self) -> bool {
        self.oracle
    }

    pub fn start(&mut self, now: SimTime, sc: &Scenario, fx: &mut Effects) {
        match self.mode {
            Mode::Ucl => {
                self.control.adds += 1;
                fx.inject.push((
                    self.node,
                    Frame::bare(Packet::add_ci(self.qname.clone()), now),
                ));
                fx.timers
                    .push((sc.duration + sc.drain, Timer::Stop(self.q)));
            }
            Mode::Pr => {
                for s in 0..self.sources.len() {
                    self.poll_next[s] = now as f64;
                    fx.timers.push((now, Timer::Poll(self.q, s)));
                }
            }
        }
    }

    pub fn stop(&mut self, fx: &mut Effects) {
        self.control.removes += 1;
        fx.inject.push((
            self.node,
            Frame::bare(Packet::remove_ci(self.qname.clone()), 0),
        ));
    }

    pub fn poll(&mut self, s: usize, now: SimTime, until: SimTime, fx: &mut Effects) {
        if now >= until {
            return;
        }
        let name = pull_name(&self.sources[s], self.next_seq[s]);
        self.next_seq[s] += 1;
        self.control.interests += 1;
        fx.inject
            .push((self.node, Frame::bare(Packet::interest(name), now)));
        self.poll_next[s] += self.poll_gap[s];
        fx.timers
            .push((self.poll_next[s].ceil() as SimTime, Timer::Poll(self.q, s)));
    }

    pub fn deliver(&mut self, f: &Frame, now: SimTime) {
        let name = &f.pkt.name;
        match (self.mode, f.pkt.packet_type) {
            (Mode::Ucl, PacketType::DataStream) if self.raw && self.qname.is_prefix_of(name) => {
                if let Some((key, _)) = event_of(f) {
                    self.count(key, f.born, None, now);
                }
            }
            (Mode::Ucl, PacketType::Data) if *name == self.qname => {
                let e = match &f.body {
                    Body::Result(e) => Some((**e).clone()),
                    _ => std::str::from_utf8(&f.pkt.payload)
                        .ok()
                        .and_then(|t| decode_emission(t).ok()),
                };
                if let Some(e) = e {
                    self.count(e.key.clone(), f.born, Some(&e), now);
                }
            }
            (Mode::Pr, PacketType::Data)
                if name.len() == 2 && self.sources.iter().any(|s| **s == *name.first()) =>
            {
                let Some((key, tuple)) = event_of(f) else {
                    return;
                };
                if !self.received.insert((key.source.clone(), key.seq)) {
                    self.dups += 1;
                    return;
                }
                match &mut self.runtime {
                    None => self.count(key, f.born, None, now),
                    Some(rt) => {
                        for e in rt.process(&[(key, tuple)]) {
                            self.count(e.key.clone(), f.born, Some(&e), now);
                        }
                    }
                }
            }
            _ => {}
        }
    }

    fn count(&mut self, key: OrderKey, born: SimTime, e: Option<&Emission>, now: SimTime) {
        if let Some(last) = &self.last_key {
            if key == *last {
                self.dups += 1;
                return;
            }
            if key < *last {
                self.fifo += 1;
            }
        }
        self.last_key = Some(key);
        self.delivered += 1;
        if now >= self.warmup && now < self.duration {
            self.times.push(now);
        }
        if born >= self.warmup && born < self.duration {
            self.latency.push((now - born) as f64 / 1000.0);
        }
        if let (true, Some(e)) = (self.oracle, e) {
            self.prints.push(Fingerprint::of(&self.qname, e));
        }
    }

    pub fn report(
        &self,
        sc: &Scenario,
        producers: &[Producer],
        nodes: &[NodeEngine],
        plans: &mut PlanCache,
    ) -> QueryReport {
        let spec = &sc.queries[self.q];
        let generated_by = |s: &str| {
            producers
                .iter()
                .find(|p| p.source() == s)
                .map_or(0, |p| p.generated)
        };
        let (generated, processed) = match self.mode {
            Mode::Pr => (
                self.sources.iter().map(|s| generated_by(s)).sum(),
                self.received.len() as u64,
            ),
            Mode::Ucl if self.raw => (generated_by(&self.sources[0]), self.delivered),
            Mode::Ucl => {
                let plan = plans.get_or_build(&spec.ast).expect("scenario plans build");
                let leaves: u64 = plan
                    .pre_order()
                    .iter()
                    .filter_map(|n| n.leaf_source())
                    .map(generated_by)
                    .sum();
                (
                    leaves,
                    nodes.iter().map(|n| n.cep.consumed(&self.qname)).sum(),
                )
            }
        };
        let loss = if generated == 0 {
            0.0
        } else {
            loss_rate(generated, processed.min(generated)).unwrap_or(0.0)
        };
        let throughput = throughput_series(&self.times, sc.warmup, sc.duration);
        let throughput_mean = if throughput.is_empty() {
            0.0
        } else {
            throughput.iter().sum::<u64>() as f64 / throughput.len() as f64
        };
        let (accuracy, f1) = if self.oracle {
            let mut trace: Vec<(OrderKey, EventTuple)> = producers
                .iter()
                .filter(|p| self.sources.iter().any(|s| **s == *p.source()))
                .flat_map(|p| p.trace.iter().cloned())
                .collect();
            trace.sort_by(|a, b| a.0.cmp(&b.0));
            let expected: Vec<Fingerprint> = oracle_emissions(&spec.ast, &sc.params, &trace)
                .iter()
                .map(|e| Fingerprint::of(&self.qname, e))
                .collect();
            let c = compare_fingerprints(&self.prints, &expected);
            (Some(c), f1_score(&c).ok())
        } else {
            (None, None)
        };
        QueryReport {
            consumer: spec.consumer.clone(),
            query: spec.text.clone(),
            qname: self.qname.to_string(),
            mode: self.mode.label().to_owned(),
            generated,
            processed,
            delivered: self.delivered,
            loss_rate: loss,
            throughput_mean,
            throughput,
            latency_ms: summarize(&self.latency),
            latency_samples_ms: self.latency.clone(),
            accuracy,
            f1,
            control: self.control,
            fifo_violations: self.fifo,
            duplicate_deliveries: self.dups,
        }
    }
}

fn event_of(f: &Frame) -> Option<(OrderKey, EventTuple)> {
    if let Body::Event(k, t) = &f.body {
        return Some((k.clone(), EventTuple::clone(t)));
    }
    let name = &f.pkt.name;
    let seq = name.last().parse().ok()?;
    let (_, mut tuples) = decode_tuples_bytes(&f.pkt.payload).ok()?;
    let t = tuples.pop()?;
    Some((OrderKey::new(t.ts, name.first(), seq), t))
}
