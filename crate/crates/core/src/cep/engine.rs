//! Per-node operator host. Operators placed on a node are keyed by the name
//! of their sub continuous interest.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use super::event::{Emission, OrderKey};
use super::ops::CepError;
use super::plan::{sub_name, PlanNode};
use super::runtime::{OpCounters, OpInstance};
use crate::naming::{EventTuple, Name};
use crate::query::QueryParams;

#[derive(Debug)]
struct Hosted {
    qname: Name,
    plan_id: usize,
    op: OpInstance,
    children: Vec<Name>,
    source: Option<Arc<str>>,
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EngineCounters {
    pub hosted: u64,
    pub removed: u64,
    pub stream_events: u64,
    pub child_inputs: u64,
    pub stray_inputs: u64,
}

/// Emission of a hosted operator, addressed to the operator's sub-name.
#[derive(Debug, Clone)]
pub struct Produced {
    pub sub: Name,
    pub emission: Emission,
}

#[derive(Debug, Default)]
pub struct CepEngine {
    hosted: BTreeMap<Name, Hosted>,
    parent_of: BTreeMap<Name, (Name, usize)>,
    roots: BTreeMap<Name, Name>,
    consumed: BTreeMap<Name, u64>,
    pub counters: EngineCounters,
}

impl CepEngine {
    /// Instantiates plan node `node` of `qname` on this engine.
    pub fn host(
        &mut self,
        qname: &Name,
        node: &PlanNode,
        params: &QueryParams,
    ) -> Result<Name, CepError> {
        let sub = sub_name(qname, node.id);
        let children: Vec<Name> = node
            .children()
            .iter()
            .map(|c| sub_name(qname, c.id))
            .collect();
        for (side, c) in children.iter().enumerate() {
            self.parent_of.insert(c.clone(), (sub.clone(), side));
        }
        let hosted = Hosted {
            qname: qname.clone(),
            plan_id: node.id,
            op: OpInstance::new(node, params)?,
            children,
            source: node.leaf_source().map(Arc::from),
        };
        self.hosted.insert(sub.clone(), hosted);
        self.counters.hosted += 1;
        Ok(sub)
    }

    /// Marks this node as the one that turns `root_sub` results into
    /// results for `qname`.
    pub fn register_root(&mut self, root_sub: Name, qname: Name) {
        self.roots.insert(root_sub, qname);
    }

    pub fn unregister_root(&mut self, sub: &Name) -> Option<Name> {
        self.roots.remove(sub)
    }

    pub fn root_query(&self, sub: &Name) -> Option<&Name> {
        self.roots.get(sub)
    }

    pub fn hosts(&self, sub: &Name) -> bool {
        self.hosted.contains_key(sub)
    }

    /// Source read by the hosted leaf window `sub`, if any.
    pub fn leaf_source(&self, sub: &Name) -> Option<&str> {
        self.hosted.get(sub).and_then(|h| h.source.as_deref())
    }

    pub fn hosted(&self) -> impl Iterator<Item = (&Name, &Name, usize)> {
        self.hosted.iter().map(|(s, h)| (s, &h.qname, h.plan_id))
    }

    /// Raw stream event consumed by the hosted leaf `sub`.
    pub fn process_stream(
        &mut self,
        sub: &Name,
        key: OrderKey,
        tuple: EventTuple,
    ) -> Option<Produced> {
        let Some(h) = self.hosted.get_mut(sub) else {
            self.counters.stray_inputs += 1;
            return None;
        };
        self.counters.stream_events += 1;
        *self.consumed.entry(h.qname.clone()).or_default() += 1;
        h.op.on_event(key, tuple).map(|emission| Produced {
            sub: sub.clone(),
            emission,
        })
    }

    /// Result of child operator `child_sub` arriving at its parent.
    pub fn on_child_data(&mut self, child_sub: &Name, e: Emission) -> Vec<Produced> {
        let Some((parent, side)) = self.parent_of.get(child_sub).cloned() else {
            self.counters.stray_inputs += 1;
            return Vec::new();
        };
        let Some(h) = self.hosted.get_mut(&parent) else {
            self.counters.stray_inputs += 1;
            return Vec::new();
        };
        self.counters.child_inputs += 1;
        h.op.on_input(side, e)
            .into_iter()
            .map(|emission| Produced {
                sub: parent.clone(),
                emission,
            })
            .collect()
    }

    /// Drops the operator behind `sub` and returns the sub-names of its
    /// children, which must be torn down next.
    pub fn on_remove(&mut self, sub: &Name) -> Vec<Name> {
        self.roots.remove(sub);
        let Some(h) = self.hosted.remove(sub) else {
            return Vec::new();
        };
        self.counters.removed += 1;
        for c in &h.children {
            self.parent_of.remove(c);
        }
        h.children
    }

    /// Stream events consumed by leaves of `qname` on this node, including
    /// operators already removed.
    pub fn consumed(&self, qname: &Name) -> u64 {
        self.consumed.get(qname).copied().unwrap_or(0)
    }

    pub fn op_counters(&self) -> OpCounters {
        let mut acc = OpCounters::default();
        for h in self.hosted.values() {
            acc.add(&h.op.counters);
        }
        acc
    }

    pub fn is_idle(&self) -> bool {
        self.hosted.is_empty() && self.roots.is_empty()
    }
}
