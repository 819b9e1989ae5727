//! Network graphs: node roles, links, face numbering and path search.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tables::FaceId;
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Producer,
    Consumer,
    Broker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    Manhattan,
    Line,
    Tree,
    Custom,
}

impl std::str::FromStr for TopologyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "manhattan" => Ok(TopologyKind::Manhattan),
            "line" => Ok(TopologyKind::Line),
            "tree" => Ok(TopologyKind::Tree),
            "custom" => Ok(TopologyKind::Custom),
            other => Err(format!(
                "unknown topology {other:?}, expected manhattan, line, tree or custom"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeSpec {
    pub id: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkSpec {
    pub a: String,
    pub b: String,
    pub delay_us: SimTime,
    /// Packets per second.
    pub bandwidth: f64,
    /// Events per second available to flow control.
    pub capacity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub delay_us: SimTime,
    pub bandwidth: f64,
    pub capacity: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            delay_us: 1_000,
            bandwidth: 60_000.0,
            capacity: 60_000.0,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid topology parameters: {0}")]
    InvalidParams(String),
}

/// A neighbour as seen from one node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Adjacency {
    pub face: FaceId,
    pub peer: String,
    pub link: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Topology {
    pub kind: TopologyKind,
    pub nodes: Vec<NodeSpec>,
    pub links: Vec<LinkSpec>,
    #[serde(skip)]
    adjacency: BTreeMap<String, Vec<Adjacency>>,
}

impl Topology {
    pub fn new(
        kind: TopologyKind,
        nodes: Vec<NodeSpec>,
        links: Vec<LinkSpec>,
    ) -> Result<Self, TopologyError> {
        let bad = |m: String| TopologyError::InvalidParams(m);
        let mut adjacency: BTreeMap<String, Vec<Adjacency>> = BTreeMap::new();
        for n in &nodes {
            if adjacency.insert(n.id.clone(), Vec::new()).is_some() {
                return Err(bad(format!("duplicate node {}", n.id)));
            }
        }
        if nodes.is_empty() {
            return Err(bad("no nodes".into()));
        }
        for (i, l) in links.iter().enumerate() {
            if l.a == l.b {
                return Err(bad(format!("self loop at {}", l.a)));
            }
            if !(l.bandwidth > 0.0 && l.capacity > 0.0 && l.delay_us > 0) {
                return Err(bad(format!(
                    "link {}-{} needs positive delay, bandwidth and capacity",
                    l.a, l.b
                )));
            }
            for (x, y) in [(&l.a, &l.b), (&l.b, &l.a)] {
                let adj = adjacency
                    .get_mut(x)
                    .ok_or_else(|| bad(format!("unknown node {x}")))?;
                let face = FaceId(2 + adj.len() as u32);
                adj.push(Adjacency {
                    face,
                    peer: y.clone(),
                    link: i,
                });
            }
        }
        let t = Topology {
            kind,
            nodes,
            links,
            adjacency,
        };
        let first = &t.nodes[0].id;
        if t.nodes
            .iter()
            .any(|n| t.shortest_path(first, &n.id).is_none())
        {
            return Err(bad("graph is not connected".into()));
        }
        Ok(t)
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn neighbors(&self, id: &str) -> &[Adjacency] {
        self.adjacency.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn face_to(&self, from: &str, to: &str) -> Option<FaceId> {
        self.neighbors(from)
            .iter()
            .find(|a| a.peer == to)
            .map(|a| a.face)
    }

    pub fn link_between(&self, a: &str, b: &str) -> Option<&LinkSpec> {
        self.neighbors(a)
            .iter()
            .find(|x| x.peer == b)
            .map(|x| &self.links[x.link])
    }

    pub fn peer_of(&self, node: &str, face: FaceId) -> Option<&Adjacency> {
        self.neighbors(node).iter().find(|a| a.face == face)
    }

    pub fn with_role(&self, role: Role) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| n.role == role)
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Minimum-delay path; ties go to the lexicographically smaller path.
    pub fn shortest_path(&self, from: &str, to: &str) -> Option<Vec<String>> {
        let mut best: BTreeMap<&str, (SimTime, Vec<String>)> = BTreeMap::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0, vec![from.to_owned()])));
        while let Some(Reverse((d, path))) = heap.pop() {
            let here = path.last().expect("paths are non-empty").clone();
            if best.contains_key(here.as_str()) {
                continue;
            }
            let key = self.adjacency.get_key_value(&here)?.0.as_str();
            best.insert(key, (d, path.clone()));
            if here == to {
                return Some(path);
            }
            for a in self.neighbors(&here) {
                if !best.contains_key(a.peer.as_str()) {
                    let mut p = path.clone();
                    p.push(a.peer.clone());
                    heap.push(Reverse((d + self.links[a.link].delay_us, p)));
                }
            }
        }
        None
    }

    /// Loop-free paths from `from` to `to`, sorted, at most `limit` of them.
    pub fn simple_paths(&self, from: &str, to: &str, limit: usize) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut path = vec![from.to_owned()];
        self.dfs(to, &mut path, &mut out, limit);
        out.sort();
        out
    }

    fn dfs(&self, to: &str, path: &mut Vec<String>, out: &mut Vec<Vec<String>>, limit: usize) {
        if out.len() >= limit {
            return;
        }
        let here = path.last().expect("non-empty").clone();
        if here == to {
            out.push(path.clone());
            return;
        }
        for a in self.neighbors(&here) {
            if !path.contains(&a.peer) {
                path.push(a.peer.clone());
                self.dfs(to, path, out, limit);
                path.pop();
            }
        }
    }

    pub fn path_delay(&self, path: &[String]) -> Option<SimTime> {
        path.windows(2)
            .map(|w| self.link_between(&w[0], &w[1]).map(|l| l.delay_us))
            .sum()
    }
}

fn spec(id: &str, role: Role) -> NodeSpec {
    NodeSpec {
        id: id.to_owned(),
        role,
    }
}

fn link(a: &str, b: &str, p: LinkParams) -> LinkSpec {
    LinkSpec {
        a: a.to_owned(),
        b: b.to_owned(),
        delay_us: p.delay_us,
        bandwidth: p.bandwidth,
        capacity: p.capacity,
    }
}

/// Builds one of the named topologies. `depth` is used by `tree` only.
pub fn build_topology(
    kind: TopologyKind,
    depth: usize,
    p: LinkParams,
) -> Result<Topology, TopologyError> {
    match kind {
        TopologyKind::Manhattan => {
            let mut nodes: Vec<NodeSpec> = ["n1", "n2", "n3", "n4", "n7"]
                .iter()
                .map(|n| spec(n, Role::Broker))
                .collect();
            nodes.insert(4, spec("n5", Role::Consumer));
            nodes.insert(5, spec("n6", Role::Producer));
            let edges = [
                ("n5", "n1"),
                ("n1", "n2"),
                ("n1", "n3"),
                ("n2", "n4"),
                ("n3", "n4"),
                ("n2", "n7"),
                ("n4", "n7"),
                ("n7", "n6"),
            ];
            Topology::new(
                kind,
                nodes,
                edges.iter().map(|(a, b)| link(a, b, p)).collect(),
            )
        }
        TopologyKind::Line => {
            let ids = ["p", "b1", "b2", "b3", "c"];
            let nodes = vec![
                spec("p", Role::Producer),
                spec("b1", Role::Broker),
                spec("b2", Role::Broker),
                spec("b3", Role::Broker),
                spec("c", Role::Consumer),
            ];
            Topology::new(
                kind,
                nodes,
                ids.windows(2).map(|w| link(w[0], w[1], p)).collect(),
            )
        }
        TopologyKind::Tree => {
            if depth == 0 || depth > 10 {
                return Err(TopologyError::InvalidParams(format!(
                    "tree depth must be in 1..=10, got {depth}"
                )));
            }
            let brokers = (1usize << depth) - 1;
            let mut nodes: Vec<NodeSpec> = (1..=brokers)
                .map(|i| spec(&format!("t{i}"), Role::Broker))
                .collect();
            let mut links = Vec::new();
            for i in 2..=brokers {
                links.push(link(&format!("t{}", i / 2), &format!("t{i}"), p));
            }
            let first_leaf = 1usize << (depth - 1);
            nodes.push(spec("gw", Role::Broker));
            nodes.push(spec("p", Role::Producer));
            nodes.push(spec("c", Role::Consumer));
            links.push(link("p", &format!("t{first_leaf}"), p));
            links.push(link(&format!("t{brokers}"), "gw", p));
            links.push(link("gw", "c", p));
            Topology::new(kind, nodes, links)
        }
        TopologyKind::Custom => Err(TopologyError::InvalidParams(
            "custom topologies are built from explicit nodes and links".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn named_shapes() {
        let m = build_topology(TopologyKind::Manhattan, 0, LinkParams::default()).unwrap();
        assert_eq!(m.nodes.len(), 7);
        assert_eq!(m.with_role(Role::Producer), vec!["n6"]);
        assert_eq!(m.with_role(Role::Consumer), vec!["n5"]);
        let l = build_topology(TopologyKind::Line, 0, LinkParams::default()).unwrap();
        assert_eq!((l.nodes.len(), l.links.len()), (5, 4));
        let t = build_topology(TopologyKind::Tree, 3, LinkParams::default()).unwrap();
        assert_eq!(t.nodes.len(), 10);
        assert_eq!(t.with_role(Role::Broker).len(), 8);
        assert!(build_topology(TopologyKind::Tree, 0, LinkParams::default()).is_err());
    }

    #[test]
    fn faces_start_after_local_faces() {
        let l = build_topology(TopologyKind::Line, 0, LinkParams::default()).unwrap();
        assert_eq!(l.face_to("b1", "p"), Some(FaceId(2)));
        assert_eq!(l.face_to("b1", "b2"), Some(FaceId(3)));
        assert_eq!(l.peer_of("b1", FaceId(3)).unwrap().peer, "b2");
    }

    #[test]
    fn paths() {
        let m = build_topology(TopologyKind::Manhattan, 0, LinkParams::default()).unwrap();
        let sp = m.shortest_path("n5", "n6").unwrap();
        assert_eq!(sp, vec!["n5", "n1", "n2", "n7", "n6"]);
        let all = m.simple_paths("n1", "n6", 64);
        assert!(all.len() >= 3);
        assert!(all
            .iter()
            .all(|p| p.first().unwrap() == "n1" && p.last().unwrap() == "n6"));
        assert_eq!(m.path_delay(&sp), Some(4_000));
    }

    #[test]
    fn rejects_disconnected() {
        let nodes = vec![spec("a", Role::Broker), spec("b", Role::Broker)];
        assert!(Topology::new(TopologyKind::Custom, nodes, vec![]).is_err());
    }
}
