//! Path probing, path selection and operator-to-node assignment.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::cep::{sub_name, PlanNode};
use crate::naming::{Name, Packet};
use crate::topology::Topology;

/// Probe answer for one candidate path `[consumer, coordinator, .., producer]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathStatus {
    pub path: Vec<String>,
    /// End-to-end response time in milliseconds.
    pub r: f64,
    /// Bottleneck bandwidth in packets per second.
    pub b: f64,
    pub qos: BTreeMap<String, f64>,
    /// Smallest advertised rate along the path.
    pub mu: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlacementError {
    #[error("no candidate paths")]
    NoPath,
    #[error("malformed path status {0:?}")]
    BadStatus(String),
    #[error("no producer for source {0}")]
    UnknownSource(String),
    #[error("no route from {0} to {1}")]
    NoRoute(String, String),
}

impl PathStatus {
    /// `start|b1|..|end=r|b|qos|mu`, with qos as `key:value` pairs joined by
    /// `,` (or `-` when empty).
    pub fn to_wire(&self) -> String {
        let qos = if self.qos.is_empty() {
            "-".to_owned()
        } else {
            self.qos
                .iter()
                .map(|(k, v)| format!("{k}:{v}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "{}={}|{}|{}|{}",
            self.path.join("|"),
            self.r,
            self.b,
            qos,
            self.mu
        )
    }

    pub fn from_wire(s: &str) -> Result<Self, PlacementError> {
        let bad = || PlacementError::BadStatus(s.to_owned());
        let (path, rest) = s.split_once('=').ok_or_else(bad)?;
        let path: Vec<String> = path.split('|').map(str::to_owned).collect();
        if path.len() < 2 || path.iter().any(String::is_empty) {
            return Err(bad());
        }
        let f: Vec<&str> = rest.split('|').collect();
        let [r, b, qos, mu] = f.as_slice() else {
            return Err(bad());
        };
        let mut qmap = BTreeMap::new();
        if *qos != "-" {
            for kv in qos.split(',') {
                let (k, v) = kv.split_once(':').ok_or_else(bad)?;
                qmap.insert(k.to_owned(), v.parse().map_err(|_| bad())?);
            }
        }
        let st = PathStatus {
            path,
            r: r.parse().map_err(|_| bad())?,
            b: b.parse().map_err(|_| bad())?,
            qos: qmap,
            mu: mu.parse().map_err(|_| bad())?,
        };
        if st.r.is_nan() || st.r <= 0.0 || st.mu.is_nan() || st.mu < 0.0 {
            return Err(bad());
        }
        Ok(st)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StatusReport {
    pub paths: Vec<PathStatus>,
    pub timeouts: usize,
}

/// Probes every loop-free path from `origin` to `producer`. `mu(from, to)`
/// gives the advertised rate for a new flow on the link as used in the
/// data direction. Paths through a node in `down` time out and are left out.
pub fn get_node_status(
    topo: &Topology,
    consumer: &str,
    origin: &str,
    producer: &str,
    mu: impl Fn(&str, &str) -> f64,
    down: &BTreeSet<String>,
) -> StatusReport {
    let mut report = StatusReport::default();
    for tail in topo.simple_paths(origin, producer, 64) {
        let mut path = Vec::with_capacity(tail.len() + 1);
        if consumer != origin {
            path.push(consumer.to_owned());
        }
        path.extend(tail);
        if path.iter().any(|n| down.contains(n)) {
            report.timeouts += 1;
            continue;
        }
        let mut r_us = 0;
        let mut b = f64::INFINITY;
        let mut m = f64::INFINITY;
        let mut ok = true;
        for w in path.windows(2) {
            let Some(l) = topo.link_between(&w[0], &w[1]) else {
                ok = false;
                break;
            };
            r_us += l.delay_us;
            b = b.min(l.bandwidth);
            m = m.min(mu(&w[1], &w[0]));
        }
        if !ok || path.len() < 2 {
            report.timeouts += 1;
            continue;
        }
        let mut qos = BTreeMap::new();
        qos.insert("hops".to_owned(), (path.len() - 1) as f64);
        report.paths.push(PathStatus {
            path,
            r: r_us as f64 / 1000.0,
            b,
            qos,
            mu: m,
        });
    }
    report
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub path: PathStatus,
    /// No path met the required rate; the best-rate path was taken instead.
    pub degraded: bool,
}

/// Strategy for choosing a path out of the probe answers.
pub trait PathObjective {
    fn select(&self, paths: &[PathStatus], required_rate: f64)
        -> Result<Selection, PlacementError>;
}

/// Minimum response time among paths that carry the required rate; ties go
/// to more bandwidth, then to the smaller node sequence.
#[derive(Debug, Default, Clone, Copy)]
pub struct MinDelayFeasible;

impl PathObjective for MinDelayFeasible {
    fn select(
        &self,
        paths: &[PathStatus],
        required_rate: f64,
    ) -> Result<Selection, PlacementError> {
        let feasible = paths
            .iter()
            .filter(|p| p.mu >= required_rate)
            .min_by(|a, b| {
                a.r.total_cmp(&b.r)
                    .then(b.b.total_cmp(&a.b))
                    .then_with(|| a.path.cmp(&b.path))
            });
        if let Some(p) = feasible {
            return Ok(Selection {
                path: p.clone(),
                degraded: false,
            });
        }
        paths
            .iter()
            .min_by(|a, b| {
                b.mu.total_cmp(&a.mu)
                    .then(a.r.total_cmp(&b.r))
                    .then_with(|| a.path.cmp(&b.path))
            })
            .map(|p| Selection {
                path: p.clone(),
                degraded: true,
            })
            .ok_or(PlacementError::NoPath)
    }
}

pub fn find_optimal_path(
    paths: &[PathStatus],
    required_rate: f64,
) -> Result<Selection, PlacementError> {
    MinDelayFeasible.select(paths, required_rate)
}

/// Maps each plan node to a node of `path`. Leaves go to the broker next to
/// the producer, the root to the coordinator, and the rest by depth.
pub fn assign_operators(plan: &PlanNode, path: &[String]) -> BTreeMap<usize, String> {
    let interior: Vec<&String> = if path.len() > 2 {
        path[1..path.len() - 1].iter().collect()
    } else {
        path.last().into_iter().collect()
    };
    let m = interior.len();
    let h = plan.height().max(1);
    plan.pre_order()
        .into_iter()
        .map(|n| {
            let at = if n.is_leaf() {
                m - 1
            } else {
                n.depth * (m - 1) / h
            };
            (n.id, interior[at].clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    /// Ends at the operator host.
    Cep,
    /// Continues to the producer application.
    App,
}

/// One sub continuous interest: sent by `route[0]` from its CEP face and
/// forwarded along `route`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubInterest {
    pub plan_id: usize,
    pub name: Name,
    pub origin: String,
    pub target: String,
    pub route: Vec<String>,
    pub terminal: Terminal,
}

impl SubInterest {
    pub fn packet(&self) -> Packet {
        Packet::add_ci(self.name.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlacementDecision {
    pub qname: Name,
    pub assignments: BTreeMap<usize, String>,
    pub path: PathStatus,
    pub degraded: bool,
    pub sub_interests: Vec<SubInterest>,
}

impl PlacementDecision {
    pub fn coordinator(&self) -> &str {
        &self.path.path[1]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("decisions serialize")
    }
}

/// Sub continuous interests for an assignment, in plan pre-order.
pub fn deploy_operators(
    qname: &Name,
    plan: &PlanNode,
    assignments: &BTreeMap<usize, String>,
    path: &[String],
    producers: &BTreeMap<String, String>,
    topo: &Topology,
) -> Result<Vec<SubInterest>, PlacementError> {
    let coordinator = &path[1];
    let pos = |n: &String| path.iter().position(|p| p == n).unwrap_or(1);
    let mut out = Vec::new();
    for n in plan.pre_order() {
        let target = assignments[&n.id].clone();
        let origin = match plan.parent_of(n.id) {
            Some(p) => assignments[&p].clone(),
            None => coordinator.clone(),
        };
        let (a, b) = (pos(&origin), pos(&target));
        let mut route: Vec<String> = if a <= b {
            path[a..=b].to_vec()
        } else {
            path[b..=a].iter().rev().cloned().collect()
        };
        let terminal = match n.leaf_source() {
            Some(src) => {
                let producer = producers
                    .get(src)
                    .ok_or_else(|| PlacementError::UnknownSource(src.to_owned()))?;
                let tail = topo
                    .shortest_path(&target, producer)
                    .ok_or_else(|| PlacementError::NoRoute(target.clone(), producer.clone()))?;
                route.extend(tail.into_iter().skip(1));
                Terminal::App
            }
            None => Terminal::Cep,
        };
        out.push(SubInterest {
            plan_id: n.id,
            name: sub_name(qname, n.id),
            origin,
            target,
            route,
            terminal,
        });
    }
    Ok(out)
}

/// What the coordinator knows when a query has to be placed.
pub struct PlacementRequest<'a> {
    pub qname: &'a Name,
    pub plan: &'a PlanNode,
    pub paths: &'a [PathStatus],
    pub required_rate: f64,
    pub producers: &'a BTreeMap<String, String>,
    pub topo: &'a Topology,
}

/// Places each query once, again only on an explicit replacement request.
pub struct Placer {
    objective: Box<dyn PathObjective + Send>,
    placed: BTreeMap<Name, PlacementDecision>,
}

impl Default for Placer {
    fn default() -> Self {
        Placer::new(Box::new(MinDelayFeasible))
    }
}

impl std::fmt::Debug for Placer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Placer")
            .field("placed", &self.placed.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Placer {
    pub fn new(objective: Box<dyn PathObjective + Send>) -> Self {
        Placer {
            objective,
            placed: BTreeMap::new(),
        }
    }

    /// Returns the new decision, or `None` when the query is already placed
    /// and `replace` is false.
    pub fn place(
        &mut self,
        req: &PlacementRequest<'_>,
        replace: bool,
    ) -> Result<Option<&PlacementDecision>, PlacementError> {
        if self.placed.contains_key(req.qname) && !replace {
            return Ok(None);
        }
        let sel = self.objective.select(req.paths, req.required_rate)?;
        let assignments = assign_operators(req.plan, &sel.path.path);
        let sub_interests = deploy_operators(
            req.qname,
            req.plan,
            &assignments,
            &sel.path.path,
            req.producers,
            req.topo,
        )?;
        let d = PlacementDecision {
            qname: req.qname.clone(),
            assignments,
            path: sel.path,
            degraded: sel.degraded,
            sub_interests,
        };
        self.placed.insert(req.qname.clone(), d);
        Ok(self.placed.get(req.qname))
    }

    pub fn decision(&self, qname: &Name) -> Option<&PlacementDecision> {
        self.placed.get(qname)
    }

    pub fn forget(&mut self, qname: &Name) -> Option<PlacementDecision> {
        self.placed.remove(qname)
    }
}
