//! Per-node forwarding state: content store, pending interest table and
//! forwarding information base.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rustc_hash::FxHashMap;

use bytes::Bytes;
use serde::Serialize;

use crate::naming::Name;
use crate::SimTime;

pub const DEFAULT_CS_CAPACITY: usize = 4096;
pub const DEFAULT_PIT_LIFETIME: SimTime = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct FaceId(pub u32);

impl FaceId {
    /// The local producer/consumer application.
    pub const APP: FaceId = FaceId(0);
    /// The node's own CEP engine.
    pub const CEP: FaceId = FaceId(1);

    pub fn is_link(self) -> bool {
        self.0 >= 2
    }
}

/// Freshness marker of a stream packet. Event timestamps are milliseconds and
/// collide at high rates, so the producer sequence number breaks ties.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Stamp {
    pub ts: i64,
    pub seq: u64,
}

impl Stamp {
    pub const ZERO: Stamp = Stamp {
        ts: i64::MIN,
        seq: 0,
    };

    pub fn new(ts: i64, seq: u64) -> Self {
        Stamp { ts, seq }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsEntry {
    pub name: Name,
    #[serde(serialize_with = "ser_len")]
    pub data: Bytes,
    pub ts: i64,
}

fn ser_len<S: serde::Serializer>(b: &Bytes, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(b.len() as u64)
}

/// LRU content store with exact-name lookup.
#[derive(Debug)]
pub struct ContentStore {
    capacity: usize,
    tick: u64,
    entries: FxHashMap<Name, (CsEntry, u64)>,
    recency: BTreeMap<u64, Name>,
}

impl Default for ContentStore {
    fn default() -> Self {
        ContentStore::new(DEFAULT_CS_CAPACITY)
    }
}

impl ContentStore {
    pub fn new(capacity: usize) -> Self {
        ContentStore {
            capacity: capacity.max(1),
            tick: 0,
            entries: FxHashMap::default(),
            recency: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn touch(&mut self, name: &Name) {
        self.tick += 1;
        if let Some((_, t)) = self.entries.get_mut(name) {
            self.recency.remove(t);
            *t = self.tick;
            self.recency.insert(self.tick, name.clone());
        }
    }

    /// Stores `data` unless a newer object is already cached under `name`.
    /// Returns whether the store changed.
    pub fn insert(&mut self, name: Name, data: Bytes, ts: i64) -> bool {
        if let Some((e, _)) = self.entries.get_mut(&name) {
            if e.ts > ts {
                return false;
            }
            e.data = data;
            e.ts = ts;
            self.touch(&name);
            return true;
        }
        if self.entries.len() >= self.capacity {
            if let Some((_, victim)) = self.recency.pop_first() {
                self.entries.remove(&victim);
            }
        }
        self.tick += 1;
        self.recency.insert(self.tick, name.clone());
        self.entries
            .insert(name.clone(), (CsEntry { name, data, ts }, self.tick));
        true
    }

    pub fn lookup(&mut self, name: &Name) -> Option<CsEntry> {
        let e = self.entries.get(name)?.0.clone();
        self.touch(name);
        Some(e)
    }

    pub fn peek(&self, name: &Name) -> Option<&CsEntry> {
        self.entries.get(name).map(|(e, _)| e)
    }

    pub fn remove(&mut self, name: &Name) -> bool {
        match self.entries.remove(name) {
            Some((_, t)) => {
                self.recency.remove(&t);
                true
            }
            None => false,
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &CsEntry> {
        self.entries.values().map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PitEntry {
    pub name: Name,
    pub faces: BTreeSet<FaceId>,
    pub continuous: bool,
    pub last: Stamp,
    #[serde(skip)]
    expires: Option<SimTime>,
}

impl PitEntry {
    pub fn last_ts(&self) -> i64 {
        self.last.ts
    }

    /// Raises the freshness marker; returns false when `stamp` is not newer.
    pub fn advance(&mut self, stamp: Stamp) -> bool {
        if stamp > self.last {
            self.last = stamp;
            true
        } else {
            false
        }
    }
}

#[derive(Debug)]
pub struct Pit {
    lifetime: SimTime,
    entries: FxHashMap<Name, PitEntry>,
    continuous: BTreeSet<Name>,
    /// Deadlines of plain entries in time order; stale ones are skipped
    /// when popped.
    expiry: VecDeque<(SimTime, Name)>,
}

impl Default for Pit {
    fn default() -> Self {
        Pit::new(DEFAULT_PIT_LIFETIME)
    }
}

impl Pit {
    pub fn new(lifetime: SimTime) -> Self {
        Pit {
            lifetime,
            entries: FxHashMap::default(),
            continuous: BTreeSet::new(),
            expiry: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Creates the entry if absent and adds `face` idempotently. The
    /// continuous flag is fixed at creation; plain entries get their
    /// lifetime refreshed.
    pub fn add_face(
        &mut self,
        name: &Name,
        face: FaceId,
        continuous: bool,
        now: SimTime,
    ) -> &PitEntry {
        let lifetime = self.lifetime;
        let entry = self.entries.entry(name.clone()).or_insert_with(|| {
            if continuous {
                self.continuous.insert(name.clone());
            }
            PitEntry {
                name: name.clone(),
                faces: BTreeSet::new(),
                continuous,
                last: Stamp::ZERO,
                expires: None,
            }
        });
        entry.faces.insert(face);
        if !entry.continuous {
            let at = now.saturating_add(lifetime);
            if entry.expires != Some(at) {
                entry.expires = Some(at);
                if self.expiry.back().is_none_or(|(last, _)| *last <= at) {
                    self.expiry.push_back((at, name.clone()));
                } else {
                    let i = self.expiry.partition_point(|(t, _)| *t <= at);
                    self.expiry.insert(i, (at, name.clone()));
                }
            }
        }
        entry
    }

    pub fn lookup(&self, name: &Name) -> Option<&PitEntry> {
        self.entries.get(name)
    }

    pub fn lookup_mut(&mut self, name: &Name) -> Option<&mut PitEntry> {
        self.entries.get_mut(name)
    }

    pub fn remove(&mut self, name: &Name) -> bool {
        match self.entries.remove(name) {
            Some(e) => {
                if e.continuous {
                    self.continuous.remove(name);
                }
                true
            }
            None => false,
        }
    }

    /// Removes one face. `Some(true)` means the entry became empty and was deleted.
    pub fn remove_face(&mut self, name: &Name, face: FaceId) -> Option<bool> {
        let e = self.entries.get_mut(name)?;
        if !e.faces.remove(&face) {
            return Some(false);
        }
        if e.faces.is_empty() {
            self.remove(name);
            Some(true)
        } else {
            Some(false)
        }
    }

    /// Drops plain entries whose lifetime ended; returns how many.
    pub fn purge_expired(&mut self, now: SimTime) -> usize {
        let mut n = 0;
        while self.expiry.front().is_some_and(|(at, _)| *at <= now) {
            let (at, name) = self.expiry.pop_front().expect("non-empty");
            if self
                .entries
                .get(&name)
                .is_some_and(|e| e.expires == Some(at))
            {
                self.entries.remove(&name);
                n += 1;
            }
        }
        n
    }

    pub fn continuous_names(&self) -> impl Iterator<Item = &Name> {
        self.continuous.iter()
    }

    pub fn has_continuous(&self) -> bool {
        !self.continuous.is_empty()
    }

    /// Entries in name order.
    pub fn entries(&self) -> impl Iterator<Item = &PitEntry> {
        let mut v: Vec<&PitEntry> = self.entries.values().collect();
        v.sort_by(|a, b| a.name.cmp(&b.name));
        v.into_iter()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FibEntry {
    pub prefix: Name,
    pub faces: Vec<FaceId>,
}

#[derive(Debug, Default)]
pub struct Fib {
    entries: BTreeMap<Name, FibEntry>,
}

impl Fib {
    pub fn new() -> Self {
        Fib::default()
    }

    pub fn add_route(&mut self, prefix: Name, face: FaceId) {
        let e = self
            .entries
            .entry(prefix.clone())
            .or_insert_with(|| FibEntry {
                prefix,
                faces: Vec::new(),
            });
        if !e.faces.contains(&face) {
            e.faces.push(face);
        }
    }

    pub fn remove_route(&mut self, prefix: &Name, face: FaceId) {
        if let Some(e) = self.entries.get_mut(prefix) {
            e.faces.retain(|f| *f != face);
            if e.faces.is_empty() {
                self.entries.remove(prefix);
            }
        }
    }

    pub fn remove_prefix(&mut self, prefix: &Name) -> bool {
        self.entries.remove(prefix).is_some()
    }

    pub fn lookup(&self, name: &Name) -> Option<&FibEntry> {
        let c = name.components();
        (1..=c.len()).rev().find_map(|n| self.entries.get(&c[..n]))
    }

    pub fn exact(&self, prefix: &Name) -> Option<&FibEntry> {
        self.entries.get(prefix)
    }

    pub fn entries(&self) -> impl Iterator<Item = &FibEntry> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// JSON snapshot of all three tables, sorted for stable comparison.
pub fn dump_tables(cs: &ContentStore, pit: &Pit, fib: &Fib) -> serde_json::Value {
    let mut cs_entries: Vec<&CsEntry> = cs.entries().collect();
    cs_entries.sort_by(|a, b| a.name.cmp(&b.name));
    serde_json::json!({
        "cs": cs_entries,
        "pit": pit.entries().collect::<Vec<_>>(),
        "fib": fib.entries().collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(s: &str) -> Name {
        Name::parse(s).unwrap()
    }

    #[test]
    fn cs_basics() {
        let mut cs = ContentStore::default();
        assert!(cs.lookup(&n("/q1")).is_none());
        cs.insert(n("/q1"), Bytes::from_static(b"d"), 5);
        assert_eq!(cs.lookup(&n("/q1")).unwrap().ts, 5);
        cs.insert(n("/q1"), Bytes::from_static(b"d2"), 9);
        let e = cs.lookup(&n("/q1")).unwrap();
        assert_eq!((e.ts, &e.data[..]), (9, &b"d2"[..]));
        assert!(!cs.insert(n("/q1"), Bytes::from_static(b"old"), 3));
        assert_eq!(cs.peek(&n("/q1")).unwrap().ts, 9);
    }

    #[test]
    fn cs_evicts_least_recent() {
        let mut cs = ContentStore::new(2);
        cs.insert(n("/a"), Bytes::new(), 1);
        cs.insert(n("/b"), Bytes::new(), 1);
        cs.lookup(&n("/a"));
        cs.insert(n("/c"), Bytes::new(), 1);
        assert!(cs.peek(&n("/a")).is_some());
        assert!(cs.peek(&n("/b")).is_none());
        assert_eq!(cs.len(), 2);
    }

    #[test]
    fn pit_faces() {
        let mut pit = Pit::default();
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        assert_eq!(pit.lookup(&n("/q")).unwrap().faces.len(), 1);
        pit.add_face(&n("/q"), FaceId(3), true, 0);
        assert_eq!(
            pit.lookup(&n("/q"))
                .unwrap()
                .faces
                .iter()
                .copied()
                .collect::<Vec<_>>(),
            vec![FaceId(2), FaceId(3)]
        );
        assert!(!pit.add_face(&n("/i"), FaceId(2), false, 0).continuous);
    }

    #[test]
    fn pit_remove_and_recreate() {
        let mut pit = Pit::default();
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        pit.lookup_mut(&n("/q")).unwrap().advance(Stamp::new(7, 1));
        assert!(pit.remove(&n("/q")));
        assert!(pit.lookup(&n("/q")).is_none());
        assert!(!pit.remove(&n("/q")));
        let e = pit.add_face(&n("/q"), FaceId(2), true, 0);
        assert_eq!(e.last, Stamp::ZERO);
        assert!(pit.has_continuous());
    }

    #[test]
    fn pit_plain_entries_expire() {
        let mut pit = Pit::new(100);
        pit.add_face(&n("/i"), FaceId(2), false, 0);
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        pit.add_face(&n("/i"), FaceId(3), false, 50);
        assert_eq!(pit.purge_expired(120), 0);
        assert_eq!(pit.purge_expired(150), 1);
        assert!(pit.lookup(&n("/i")).is_none());
        assert_eq!(pit.purge_expired(u64::MAX), 0);
        assert!(pit.lookup(&n("/q")).is_some());
    }

    #[test]
    fn pit_remove_face() {
        let mut pit = Pit::default();
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        pit.add_face(&n("/q"), FaceId(3), true, 0);
        assert_eq!(pit.remove_face(&n("/q"), FaceId(2)), Some(false));
        assert_eq!(pit.remove_face(&n("/q"), FaceId(3)), Some(true));
        assert_eq!(pit.remove_face(&n("/q"), FaceId(3)), None);
        assert!(!pit.has_continuous());
    }

    #[test]
    fn fib_lpm() {
        let mut fib = Fib::new();
        fib.add_route(n("/a"), FaceId(2));
        fib.add_route(n("/a/b"), FaceId(3));
        fib.add_route(n("/a/b"), FaceId(3));
        assert_eq!(fib.lookup(&n("/a/b/c")).unwrap().prefix, n("/a/b"));
        assert_eq!(fib.lookup(&n("/a/b")).unwrap().faces, vec![FaceId(3)]);
        assert_eq!(fib.lookup(&n("/a/x")).unwrap().prefix, n("/a"));
        assert!(fib.lookup(&n("/x")).is_none());
        fib.remove_route(&n("/a/b"), FaceId(3));
        assert_eq!(fib.lookup(&n("/a/b/c")).unwrap().prefix, n("/a"));
    }

    #[test]
    fn dump_is_json() {
        let mut cs = ContentStore::default();
        let mut pit = Pit::default();
        let mut fib = Fib::new();
        cs.insert(n("/d"), Bytes::from_static(b"abc"), 1);
        pit.add_face(&n("/q"), FaceId(2), true, 0);
        fib.add_route(n("/s"), FaceId(3));
        let v = dump_tables(&cs, &pit, &fib);
        assert_eq!(v["cs"][0]["name"], "/d");
        assert_eq!(v["cs"][0]["data"], 3);
        assert_eq!(v["pit"][0]["continuous"], true);
        assert_eq!(v["fib"][0]["faces"][0], 3);
    }
}
