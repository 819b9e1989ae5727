//! Stateful operator instances and a whole-query runtime.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::Serialize;

use super::event::{Emission, OrderKey, Output};
use super::ops::*;
use super::plan::PlanNode;
use crate::naming::{EventTuple, Schema};
use crate::query::{AggFn, Area, JoinPredicate, OpKind, OperatorSpec, Predicate, QueryParams};

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounters {
    pub inputs: u64,
    pub emissions: u64,
    pub empty_skips: u64,
    pub errors: u64,
}

impl OpCounters {
    pub fn add(&mut self, o: &OpCounters) {
        self.inputs += o.inputs;
        self.emissions += o.emissions;
        self.empty_skips += o.empty_skips;
        self.errors += o.errors;
    }
}

/// Releases inputs from two key-ordered queues in global key order. An item
/// leaves only once the other side has something queued, or on flush.
#[derive(Debug, Default)]
pub struct Sequencer {
    queues: [VecDeque<Emission>; 2],
}

impl Sequencer {
    pub fn push(&mut self, side: usize, e: Emission) {
        self.queues[side].push_back(e);
    }

    fn pop_min(&mut self) -> Option<(usize, Emission)> {
        let side = match (self.queues[0].front(), self.queues[1].front()) {
            (Some(l), Some(r)) => usize::from(r.key < l.key),
            (Some(_), None) => 0,
            (None, Some(_)) => 1,
            (None, None) => return None,
        };
        self.queues[side].pop_front().map(|e| (side, e))
    }

    pub fn release(&mut self) -> Vec<(usize, Emission)> {
        let mut out = Vec::new();
        while !self.queues[0].is_empty() && !self.queues[1].is_empty() {
            out.extend(self.pop_min());
        }
        out
    }

    pub fn drain(&mut self) -> Vec<(usize, Emission)> {
        std::iter::from_fn(|| self.pop_min()).collect()
    }

    pub fn pending(&self) -> usize {
        self.queues[0].len() + self.queues[1].len()
    }
}

type Window = (Arc<Schema>, Vec<EventTuple>);

#[derive(Debug)]
enum OpState {
    Window {
        source: String,
        duration_ms: u64,
        buffer: VecDeque<EventTuple>,
    },
    Filter {
        pred: Predicate,
    },
    Join {
        pred: JoinPredicate,
        seq: Sequencer,
        last: [Option<Window>; 2],
    },
    Aggregate {
        func: AggFn,
        attr: String,
    },
    Heatmap {
        cell: f64,
        area: Area,
    },
    Predict {
        interval_ms: u64,
        last_slot: i64,
    },
}

#[derive(Debug)]
pub struct OpInstance {
    pub plan_id: usize,
    pub kind: OpKind,
    pub counters: OpCounters,
    state: OpState,
}

impl OpInstance {
    pub fn new(node: &PlanNode, params: &QueryParams) -> Result<Self, CepError> {
        let state = match &node.op {
            OperatorSpec::Window { duration_ms, .. } => OpState::Window {
                source: node.leaf_source().unwrap_or_default().to_owned(),
                duration_ms: *duration_ms,
                buffer: VecDeque::new(),
            },
            OperatorSpec::Filter { predicate, .. } => OpState::Filter {
                pred: predicate.clone(),
            },
            OperatorSpec::Join { predicate, .. } => OpState::Join {
                pred: predicate.clone(),
                seq: Sequencer::default(),
                last: [None, None],
            },
            OperatorSpec::Aggregate { func, attr, .. } => OpState::Aggregate {
                func: *func,
                attr: attr.clone(),
            },
            OperatorSpec::Heatmap {
                cell_size, area, ..
            } => {
                let cell = params.cell_size(cell_size).ok_or(CepError::InvalidArea)?;
                let area = params.area(area).ok_or(CepError::InvalidArea)?;
                grid_dims(cell, &area)?;
                OpState::Heatmap { cell, area }
            }
            OperatorSpec::Predict { interval_ms, .. } => OpState::Predict {
                interval_ms: *interval_ms,
                last_slot: 0,
            },
            OperatorSpec::Source { .. } => unreachable!("sources are not plan nodes"),
        };
        Ok(OpInstance {
            plan_id: node.id,
            kind: node.kind,
            counters: OpCounters::default(),
            state,
        })
    }

    pub fn source(&self) -> Option<&str> {
        match &self.state {
            OpState::Window { source, .. } => Some(source),
            _ => None,
        }
    }

    /// Feeds a raw stream event to a window and returns its emission.
    pub fn on_event(&mut self, key: OrderKey, tuple: EventTuple) -> Option<Emission> {
        let OpState::Window {
            duration_ms,
            buffer,
            ..
        } = &mut self.state
        else {
            self.counters.errors += 1;
            return None;
        };
        self.counters.inputs += 1;
        let now = key.ts;
        let schema = tuple.schema.clone();
        let at = buffer.partition_point(|t| t.ts <= tuple.ts);
        buffer.insert(at, tuple);
        let lo = now - *duration_ms as i64;
        while buffer.front().is_some_and(|t| t.ts <= lo) {
            buffer.pop_front();
        }
        let tuples = eval_window(buffer.make_contiguous(), now, *duration_ms);
        self.counters.emissions += 1;
        Some(Emission {
            key,
            output: Output::Tuples { schema, tuples },
        })
    }

    /// Feeds the output of child `side` (0 = left) to this operator.
    pub fn on_input(&mut self, side: usize, e: Emission) -> Vec<Emission> {
        self.counters.inputs += 1;
        if let OpState::Join { seq, .. } = &mut self.state {
            seq.push(side, e);
            let ready = seq.release();
            return self.join_all(ready);
        }
        self.apply(e).into_iter().collect()
    }

    pub fn flush(&mut self) -> Vec<Emission> {
        if let OpState::Join { seq, .. } = &mut self.state {
            let ready = seq.drain();
            return self.join_all(ready);
        }
        Vec::new()
    }

    fn join_all(&mut self, ready: Vec<(usize, Emission)>) -> Vec<Emission> {
        ready
            .into_iter()
            .filter_map(|(side, e)| self.join_one(side, e))
            .collect()
    }

    fn join_one(&mut self, side: usize, e: Emission) -> Option<Emission> {
        let OpState::Join { pred, last, .. } = &mut self.state else {
            unreachable!()
        };
        let Output::Tuples { schema, tuples } = e.output else {
            self.counters.errors += 1;
            return None;
        };
        last[side] = Some((schema, tuples));
        let (Some((ls, lt)), Some((rs, rt))) = (&last[0], &last[1]) else {
            return None;
        };
        match eval_join(ls, lt, rs, rt, pred) {
            Ok((schema, tuples)) => {
                self.counters.emissions += 1;
                Some(Emission {
                    key: e.key,
                    output: Output::Tuples { schema, tuples },
                })
            }
            Err(_) => {
                self.counters.errors += 1;
                None
            }
        }
    }

    fn apply(&mut self, e: Emission) -> Option<Emission> {
        let Emission { key, output } = e;
        let Output::Tuples { schema, tuples } = output else {
            self.counters.errors += 1;
            return None;
        };
        let result = match &mut self.state {
            OpState::Filter { pred } => eval_filter(&schema, &tuples, pred).map(|tuples| {
                Some(Output::Tuples {
                    schema: schema.clone(),
                    tuples,
                })
            }),
            OpState::Aggregate { func, attr } => {
                match eval_aggregate(&schema, &tuples, *func, attr) {
                    Ok(value) => Ok(Some(Output::Scalar { value })),
                    Err(CepError::EmptyWindow) => {
                        self.counters.empty_skips += 1;
                        Ok(None)
                    }
                    Err(err) => Err(err),
                }
            }
            OpState::Heatmap { cell, area } => {
                eval_heatmap(&tuples, *cell, area).map(|g| Some(Output::Grid(g)))
            }
            OpState::Predict {
                interval_ms,
                last_slot,
            } => match eval_predict(&tuples, key.ts, *interval_ms, *last_slot) {
                PredictOutcome::NotBoundary => Ok(None),
                PredictOutcome::EmptyWindow { slot } => {
                    *last_slot = slot;
                    self.counters.empty_skips += 1;
                    Ok(None)
                }
                PredictOutcome::Forecast { slot, value } => {
                    *last_slot = slot;
                    Ok(Some(Output::Forecast {
                        slot,
                        horizon_ms: PREDICT_HORIZON_MS,
                        value,
                    }))
                }
            },
            OpState::Window { .. } | OpState::Join { .. } => unreachable!(),
        };
        match result {
            Ok(Some(output)) => {
                self.counters.emissions += 1;
                Some(Emission { key, output })
            }
            Ok(None) => None,
            Err(_) => {
                self.counters.errors += 1;
                None
            }
        }
    }
}

/// Below this batch size subtrees run sequentially; forking costs more
/// than it saves.
const PARALLEL_BATCH: usize = 64;

#[derive(Debug)]
struct RuntimeNode {
    op: OpInstance,
    children: Vec<RuntimeNode>,
}

impl RuntimeNode {
    fn new(plan: &PlanNode, params: &QueryParams) -> Result<Self, CepError> {
        let children = plan
            .children()
            .into_iter()
            .map(|c| RuntimeNode::new(c, params))
            .collect::<Result<_, _>>()?;
        Ok(RuntimeNode {
            op: OpInstance::new(plan, params)?,
            children,
        })
    }

    fn process(&mut self, batch: &[(OrderKey, EventTuple)]) -> Vec<Emission> {
        match self.children.as_mut_slice() {
            [] => {
                let src = self.op.source().unwrap_or_default().to_owned();
                batch
                    .iter()
                    .filter(|(k, _)| *k.source == *src)
                    .filter_map(|(k, t)| self.op.on_event(k.clone(), t.clone()))
                    .collect()
            }
            [child] => {
                let inputs = child.process(batch);
                inputs
                    .into_iter()
                    .flat_map(|e| self.op.on_input(0, e))
                    .collect()
            }
            [left, right] => {
                let (l, r) = if batch.len() >= PARALLEL_BATCH {
                    rayon::join(|| left.process(batch), || right.process(batch))
                } else {
                    (left.process(batch), right.process(batch))
                };
                let mut out = Vec::new();
                for e in l {
                    out.extend(self.op.on_input(0, e));
                }
                for e in r {
                    out.extend(self.op.on_input(1, e));
                }
                out
            }
            _ => unreachable!("plan nodes have at most two children"),
        }
    }

    fn flush(&mut self) -> Vec<Emission> {
        let mut out = Vec::new();
        for (side, c) in self.children.iter_mut().enumerate() {
            for e in c.flush() {
                out.extend(self.op.on_input(side, e));
            }
        }
        out.extend(self.op.flush());
        out
    }

    fn counters(&self, acc: &mut OpCounters) {
        acc.add(&self.op.counters);
        for c in &self.children {
            c.counters(acc);
        }
    }
}

/// Whole operator graph evaluated in one place.
#[derive(Debug)]
pub struct QueryRuntime {
    root: RuntimeNode,
}

impl QueryRuntime {
    pub fn new(plan: &PlanNode, params: &QueryParams) -> Result<Self, CepError> {
        Ok(QueryRuntime {
            root: RuntimeNode::new(plan, params)?,
        })
    }

    /// Processes a batch of stream events (in arrival order) and returns the
    /// root emissions it released, in key order.
    pub fn process(&mut self, batch: &[(OrderKey, EventTuple)]) -> Vec<Emission> {
        self.root.process(batch)
    }

    /// Releases everything still held by join sequencers.
    pub fn finish(&mut self) -> Vec<Emission> {
        self.root.flush()
    }

    pub fn counters(&self) -> OpCounters {
        let mut acc = OpCounters::default();
        self.root.counters(&mut acc);
        acc
    }
}

/// Runs `batch` through `runtime`; independent subtrees are evaluated in
/// parallel and joins release results in key order.
pub fn process_operator_graph(
    runtime: &mut QueryRuntime,
    batch: &[(OrderKey, EventTuple)],
) -> Vec<Emission> {
    runtime.process(batch)
}
