//! Rate-based flow control: per-link ledgers computing the advertised rate,
//! management packets clamped hop by hop, and producer rate adaptation.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::naming::{Name, Packet, FLAG_FEEDBACK, FLAG_MANAGEMENT, FLAG_U_BIT};
use crate::SimTime;

pub const DEFAULT_PERIOD: SimTime = 100_000;
pub const DEFAULT_K: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("no unrestricted flows on this link")]
    NoUnrestrictedFlows,
    #[error("not a management packet: {0}")]
    NotManagement(String),
    #[error("stamped rate must be positive, got {0}")]
    NonPositiveRate(f64),
}

pub type FlowId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Feedback,
}

/// `allowed` is the smallest advertised rate seen along the path so far. A
/// producer whose packet came back unclamped raises its estimate to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManagementPacket {
    pub flow_id: FlowId,
    pub round: u64,
    pub u_bit: bool,
    pub stamped_rate: f64,
    pub allowed: f64,
    pub direction: Direction,
    /// Stream the flow carries; feedback is routed back towards it.
    pub source: String,
}

impl ManagementPacket {
    pub fn forward(flow_id: FlowId, round: u64, stamped_rate: f64, u_bit: bool) -> Self {
        ManagementPacket {
            flow_id,
            round,
            u_bit,
            stamped_rate,
            allowed: f64::INFINITY,
            direction: Direction::Forward,
            source: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    /// The consumer's echo of a forward packet.
    pub fn into_feedback(mut self) -> Self {
        self.direction = Direction::Feedback;
        self
    }

    /// Management packets ride as flagged Interests named
    /// `/mgmt/flow/<flow>/<round>/<stamped>/<allowed>[/<source>]`.
    pub fn to_packet(&self) -> Packet {
        let mut parts = vec![
            "mgmt".to_string(),
            "flow".to_string(),
            self.flow_id.to_string(),
            self.round.to_string(),
            self.stamped_rate.to_string(),
            self.allowed.to_string(),
        ];
        if !self.source.is_empty() {
            parts.push(self.source.clone());
        }
        let name = Name::from_components(parts).expect("numeric components are never empty");
        let mut flags = FLAG_MANAGEMENT;
        if self.u_bit {
            flags |= FLAG_U_BIT;
        }
        if self.direction == Direction::Feedback {
            flags |= FLAG_FEEDBACK;
        }
        Packet::interest(name).with_flags(flags)
    }

    pub fn from_packet(p: &Packet) -> Result<Self, FlowError> {
        let bad = || FlowError::NotManagement(p.name.to_string());
        let c = p.name.components();
        if !p.is_management() || !(6..=7).contains(&c.len()) || c[0] != "mgmt" || c[1] != "flow" {
            return Err(bad());
        }
        let stamped_rate: f64 = c[4].parse().map_err(|_| bad())?;
        if stamped_rate <= 0.0 || stamped_rate.is_nan() {
            return Err(FlowError::NonPositiveRate(stamped_rate));
        }
        Ok(ManagementPacket {
            flow_id: c[2].parse().map_err(|_| bad())?,
            round: c[3].parse().map_err(|_| bad())?,
            u_bit: p.flags & FLAG_U_BIT != 0,
            stamped_rate,
            allowed: c[5].parse().map_err(|_| bad())?,
            source: c.get(6).cloned().unwrap_or_default(),
            direction: if p.flags & FLAG_FEEDBACK != 0 {
                Direction::Feedback
            } else {
                Direction::Forward
            },
        })
    }
}

/// `(C - C_R) / (n - n_R)` with `n = f + k*b` and `n_R = f_R + k*b_R`.
pub fn advertised_rate_from(
    c: f64,
    c_r: f64,
    f: usize,
    b: usize,
    f_r: usize,
    b_r: usize,
    k: u8,
) -> Result<f64, FlowError> {
    let k = k as usize;
    let n = f + k * b;
    let n_r = f_r + k * b_r;
    if n <= n_r {
        return Err(FlowError::NoUnrestrictedFlows);
    }
    Ok((c - c_r) / (n - n_r) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum FlowKey {
    Forward(FlowId),
    Feedback(FlowId),
}

/// Recorded rates and the restricted/unrestricted split for one outgoing link.
#[derive(Debug, Clone, Serialize)]
pub struct FlowLedger {
    pub capacity: f64,
    pub k: u8,
    recorded: BTreeMap<FlowKey, f64>,
    restricted: BTreeSet<FlowKey>,
    mu: f64,
}

impl FlowLedger {
    pub fn new(capacity: f64, k: u8) -> Self {
        FlowLedger {
            capacity,
            k,
            recorded: BTreeMap::new(),
            restricted: BTreeSet::new(),
            mu: capacity,
        }
    }

    pub fn record(&mut self, key: FlowKey, rate: f64) {
        self.recorded.insert(key, rate);
        self.reclassify();
    }

    pub fn remove_flow(&mut self, flow: FlowId) {
        self.recorded.remove(&FlowKey::Forward(flow));
        self.recorded.remove(&FlowKey::Feedback(flow));
        self.reclassify();
    }

    fn weight(&self, key: &FlowKey) -> usize {
        match key {
            FlowKey::Forward(_) => 1,
            FlowKey::Feedback(_) => self.k as usize,
        }
    }

    fn counts(&self, set: impl Iterator<Item = FlowKey>) -> (usize, usize, f64) {
        let (mut f, mut b, mut c) = (0, 0, 0.0);
        for key in set {
            match key {
                FlowKey::Forward(_) => f += 1,
                FlowKey::Feedback(_) => b += 1,
            }
            c += self.recorded[&key] * self.weight(&key) as f64;
        }
        (f, b, c)
    }

    fn mu_for(&self, restricted: &BTreeSet<FlowKey>) -> Result<f64, FlowError> {
        let (f, b, _) = self.counts(self.recorded.keys().copied());
        let (f_r, b_r, c_r) = self.counts(restricted.iter().copied());
        advertised_rate_from(self.capacity, c_r, f, b, f_r, b_r, self.k)
    }

    /// Fixed point of "restricted iff recorded rate below the advertised rate".
    /// Starting from an empty restricted set the advertised rate only grows,
    /// so this ends within one pass per flow. If the next step would restrict
    /// every flow, the last valid rate is kept.
    fn reclassify(&mut self) {
        let known: usize = self.recorded.keys().map(|k| self.weight(k)).sum();
        let mut r = BTreeSet::new();
        let mut mu = self.capacity / known.max(1) as f64;
        loop {
            let next: BTreeSet<FlowKey> = self
                .recorded
                .iter()
                .filter(|(k, rate)| self.weight(k) > 0 && **rate < mu)
                .map(|(k, _)| *k)
                .collect();
            if next == r {
                break;
            }
            match self.mu_for(&next) {
                Ok(m) => {
                    mu = m;
                    r = next;
                }
                Err(_) => break,
            }
        }
        self.mu = mu;
        self.restricted = self
            .recorded
            .iter()
            .filter(|(k, rate)| self.weight(k) > 0 && **rate < mu)
            .map(|(k, _)| *k)
            .collect();
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Advertised rate for the current classification.
    pub fn advertised_rate(&self) -> Result<f64, FlowError> {
        self.mu_for(&self.restricted)
    }

    /// Share a newly admitted flow would get: one more unrestricted flow.
    pub fn advertised_for_new_flow(&self) -> f64 {
        let (f, b, _) = self.counts(self.recorded.keys().copied());
        let (f_r, b_r, c_r) = self.counts(self.restricted.iter().copied());
        advertised_rate_from(self.capacity, c_r, f + 1, b, f_r, b_r, self.k)
            .unwrap_or(self.capacity)
    }

    pub fn restricted(&self) -> &BTreeSet<FlowKey> {
        &self.restricted
    }

    pub fn unrestricted(&self) -> BTreeSet<FlowKey> {
        self.recorded
            .keys()
            .filter(|k| !self.restricted.contains(k))
            .copied()
            .collect()
    }

    pub fn recorded(&self, key: FlowKey) -> Option<f64> {
        self.recorded.get(&key).copied()
    }

    pub fn restricted_capacity(&self) -> f64 {
        self.counts(self.restricted.iter().copied()).2
    }

    /// Router handling of a forward management packet leaving on this link.
    pub fn on_management(&mut self, m: &ManagementPacket) -> ManagementPacket {
        self.record(FlowKey::Forward(m.flow_id), m.stamped_rate);
        let mu = self.mu;
        let mut out = m.clone();
        out.allowed = out.allowed.min(mu);
        if m.stamped_rate >= mu {
            out.stamped_rate = mu;
            out.u_bit = true;
        }
        out
    }
}

pub fn router_on_management(ledger: &mut FlowLedger, m: &ManagementPacket) -> ManagementPacket {
    ledger.on_management(m)
}

/// New estimate after a feedback packet. A set u-bit means some router
/// constrained the flow; otherwise it may grow to the advertised rate.
pub fn producer_on_feedback(desired: f64, m: &ManagementPacket, current_advertised: f64) -> f64 {
    if m.u_bit {
        m.stamped_rate.min(desired)
    } else {
        current_advertised.min(desired)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProducerRateState {
    pub flow_id: FlowId,
    pub desired_rate: f64,
    pub current_estimate: f64,
    pub period: SimTime,
    pub last_allocation: f64,
    next_emit: SimTime,
    round: u64,
    applied_round: Option<u64>,
}

impl ProducerRateState {
    pub fn new(flow_id: FlowId, desired_rate: f64, period: SimTime) -> Self {
        ProducerRateState {
            flow_id,
            desired_rate,
            current_estimate: desired_rate,
            period: period.max(1),
            last_allocation: f64::INFINITY,
            next_emit: 0,
            round: 0,
            applied_round: None,
        }
    }

    /// True once at least one feedback has come back.
    pub fn has_feedback(&self) -> bool {
        self.applied_round.is_some()
    }

    pub fn next_emit(&self) -> SimTime {
        self.next_emit
    }

    pub fn emit_management(&mut self, now: SimTime) -> Option<ManagementPacket> {
        if now < self.next_emit {
            return None;
        }
        let missed = (now - self.next_emit) / self.period;
        self.next_emit += (missed + 1) * self.period;
        self.round += 1;
        let u_bit = self.has_feedback() && self.desired_rate < self.last_allocation;
        Some(ManagementPacket::forward(
            self.flow_id,
            self.round,
            self.current_estimate,
            u_bit,
        ))
    }

    /// Applies one feedback. Several feedbacks for the same round (one per
    /// consumer branch) combine by taking the minimum; older rounds are ignored.
    pub fn on_feedback(&mut self, m: &ManagementPacket) -> f64 {
        let candidate = producer_on_feedback(self.desired_rate, m, m.allowed);
        match self.applied_round {
            Some(r) if m.round < r => {}
            Some(r) if m.round == r => {
                self.current_estimate = self.current_estimate.min(candidate);
                self.last_allocation = self.last_allocation.min(m.allowed);
            }
            _ => {
                self.applied_round = Some(m.round);
                self.current_estimate = candidate;
                self.last_allocation = m.allowed;
            }
        }
        self.current_estimate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateSample {
    pub time_us: SimTime,
    pub flow: FlowId,
    pub estimate: f64,
    pub stamped: f64,
    pub u_bit: bool,
}

pub fn rate_trace_csv(samples: &[RateSample]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for s in samples {
        w.serialize(s)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Round trips of `demands.len()` producers sharing one link of capacity `c`
/// with no other router in the path. Returns the estimates after each round.
pub fn bottleneck_rounds(c: f64, k: u8, demands: &[f64], rounds: usize) -> Vec<Vec<f64>> {
    let mut ledger = FlowLedger::new(c, k);
    let mut producers: Vec<ProducerRateState> = demands
        .iter()
        .enumerate()
        .map(|(i, d)| ProducerRateState::new(i as FlowId, *d, DEFAULT_PERIOD))
        .collect();
    let mut history = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let now = round as SimTime * DEFAULT_PERIOD;
        let sent: Vec<ManagementPacket> = producers
            .iter_mut()
            .filter_map(|p| p.emit_management(now))
            .collect();
        let echoed: Vec<ManagementPacket> = sent
            .iter()
            .map(|m| ledger.on_management(m).into_feedback())
            .collect();
        for m in &echoed {
            producers[m.flow_id as usize].on_feedback(m);
        }
        history.push(producers.iter().map(|p| p.current_estimate).collect());
    }
    history
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advertised_rate_examples() {
        assert_eq!(advertised_rate_from(100.0, 40.0, 4, 0, 1, 0, 0), Ok(20.0));
        assert_eq!(advertised_rate_from(100.0, 0.0, 1, 0, 0, 0, 0), Ok(100.0));
        assert_eq!(
            advertised_rate_from(100.0, 100.0, 3, 0, 3, 0, 0),
            Err(FlowError::NoUnrestrictedFlows)
        );
    }

    fn ledger_with(c: f64, rates: &[f64]) -> FlowLedger {
        let mut l = FlowLedger::new(c, 0);
        for (i, r) in rates.iter().enumerate() {
            l.record(FlowKey::Forward(i as FlowId), *r);
        }
        l
    }

    #[test]
    fn clamps_at_or_above_mu() {
        // flows 0..3 at 40 and 10; with C=100 max-min gives restricted {1:10}, mu=30
        let mut l = ledger_with(100.0, &[40.0, 10.0, 40.0, 40.0]);
        assert_eq!(l.mu(), 30.0);
        let out = l.on_management(&ManagementPacket::forward(9, 1, 50.0, false));
        // adding flow 9 at 50: restricted {10}, mu = 90/4 = 22.5
        assert_eq!(out.stamped_rate, 22.5);
        assert!(out.u_bit);
        assert!(l.restricted().contains(&FlowKey::Forward(1)));
    }

    #[test]
    fn slow_flow_is_restricted_and_unchanged() {
        let mut l = ledger_with(100.0, &[80.0, 80.0, 80.0, 80.0]);
        assert_eq!(l.mu(), 25.0);
        let m = ManagementPacket::forward(7, 1, 10.0, false);
        let out = l.on_management(&m);
        assert_eq!(out.stamped_rate, 10.0);
        assert!(!out.u_bit);
        assert!(l.restricted().contains(&FlowKey::Forward(7)));
    }

    #[test]
    fn single_flow_boundary() {
        let mut l = FlowLedger::new(100.0, 0);
        let out = l.on_management(&ManagementPacket::forward(0, 1, 100.0, false));
        assert_eq!(out.stamped_rate, 100.0);
        assert!(out.u_bit);
    }

    #[test]
    fn restricted_capacity_within_c() {
        let l = ledger_with(100.0, &[5.0, 10.0, 30.0, 90.0, 90.0]);
        assert!(l.restricted_capacity() <= l.capacity);
        let all: BTreeSet<_> = l.restricted().union(&l.unrestricted()).copied().collect();
        assert_eq!(all.len(), 5);
        assert_eq!(l.mu(), 85.0 / 3.0);
    }

    #[test]
    fn feedback_counts_only_with_k1() {
        let mut l = FlowLedger::new(100.0, 1);
        l.record(FlowKey::Forward(0), 200.0);
        l.record(FlowKey::Feedback(0), 10.0);
        assert_eq!(l.mu(), 90.0);
        let mut l0 = FlowLedger::new(100.0, 0);
        l0.record(FlowKey::Forward(0), 200.0);
        l0.record(FlowKey::Feedback(0), 10.0);
        assert_eq!(l0.mu(), 100.0);
    }

    #[test]
    fn producer_feedback_rules() {
        let mut m = ManagementPacket::forward(0, 1, 20.0, true).into_feedback();
        assert_eq!(producer_on_feedback(50.0, &m, 80.0), 20.0);
        m.u_bit = false;
        assert_eq!(producer_on_feedback(50.0, &m, 80.0), 50.0);
        assert_eq!(producer_on_feedback(100.0, &m, 80.0), 80.0);
    }

    #[test]
    fn emission_period() {
        let mut p = ProducerRateState::new(0, 30.0, 100_000);
        assert!(p.emit_management(0).is_some());
        assert!(p.emit_management(50_000).is_none());
        let m = p.emit_management(100_000).unwrap();
        assert_eq!(m.stamped_rate, 30.0);
        assert_eq!(m.round, 2);
        assert!(!m.u_bit);
    }

    #[test]
    fn u_bit_when_demand_below_allocation() {
        let mut p = ProducerRateState::new(0, 10.0, 100_000);
        let mut fb = p.emit_management(0).unwrap().into_feedback();
        fb.allowed = 40.0;
        p.on_feedback(&fb);
        assert_eq!(p.current_estimate, 10.0);
        assert!(p.emit_management(100_000).unwrap().u_bit);
    }

    #[test]
    fn same_round_feedbacks_take_minimum() {
        let mut p = ProducerRateState::new(0, 100.0, 100_000);
        let m = p.emit_management(0).unwrap();
        let mut a = m.clone().into_feedback();
        a.u_bit = true;
        a.stamped_rate = 30.0;
        let mut b = m.into_feedback();
        b.allowed = 70.0;
        p.on_feedback(&b);
        assert_eq!(p.current_estimate, 70.0);
        p.on_feedback(&a);
        assert_eq!(p.current_estimate, 30.0);
    }

    #[test]
    fn packet_round_trip() {
        let mut m = ManagementPacket::forward(3, 12, 1234.5, true);
        m.allowed = 2000.0;
        let back = ManagementPacket::from_packet(&m.to_packet()).unwrap();
        assert_eq!(back, m);
        let fb = m.into_feedback().with_source("GPS_S1");
        assert_eq!(fb.to_packet().name.len(), 7);
        assert_eq!(ManagementPacket::from_packet(&fb.to_packet()).unwrap(), fb);
        assert!(
            ManagementPacket::from_packet(&Packet::interest(Name::parse("/a").unwrap())).is_err()
        );
    }

    #[test]
    fn two_producers_share_fairly() {
        let h = bottleneck_rounds(100.0, 0, &[80.0, 80.0], 10);
        assert_eq!(h.last().unwrap(), &vec![50.0, 50.0]);
    }

    #[test]
    fn trace_csv_header() {
        let s = rate_trace_csv(&[RateSample {
            time_us: 0,
            flow: 1,
            estimate: 2.0,
            stamped: 2.0,
            u_bit: false,
        }])
        .unwrap();
        assert!(s.starts_with("time_us,flow,estimate,stamped,u_bit\n"));
    }
}
