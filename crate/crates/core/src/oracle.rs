//! Brute-force reference evaluation. Every subtree's output is recomputed
//! from the whole trace with plain loops; nothing here shares code with the
//! incremental runtime.

use std::sync::Arc;

use crate::cep::{Emission, Grid, OrderKey, Output};
use crate::naming::{EventTuple, Schema, Value};
use crate::query::{AggFn, CmpOp, Literal, OperatorSpec, QueryAst, QueryParams};

/// One recorded stream event: its processing key and the tuple.
pub type TraceEvent = (OrderKey, EventTuple);

/// Root emissions of `ast` over `trace`, in key order. `trace` must list
/// each source's events in production order.
pub fn oracle_emissions(
    ast: &QueryAst,
    params: &QueryParams,
    trace: &[TraceEvent],
) -> Vec<Emission> {
    match &ast.root {
        OperatorSpec::Source { name } => trace
            .iter()
            .filter(|(k, _)| &*k.source == name)
            .map(|(k, t)| Emission {
                key: k.clone(),
                output: Output::Tuples {
                    schema: t.schema.clone(),
                    tuples: vec![t.clone()],
                },
            })
            .collect(),
        root => eval(root, params, trace),
    }
}

fn eval(op: &OperatorSpec, params: &QueryParams, trace: &[TraceEvent]) -> Vec<Emission> {
    match op {
        OperatorSpec::Source { .. } => Vec::new(),
        OperatorSpec::Window { duration_ms, child } => {
            let OperatorSpec::Source { name } = child.as_ref() else {
                return Vec::new();
            };
            let events: Vec<&TraceEvent> =
                trace.iter().filter(|(k, _)| &*k.source == name).collect();
            let d = *duration_ms as i64;
            let mut out = Vec::with_capacity(events.len());
            for (i, (key, trigger)) in events.iter().enumerate() {
                let now = key.ts;
                let mut window: Vec<EventTuple> = events[..=i]
                    .iter()
                    .map(|(_, t)| t)
                    .filter(|t| t.ts > now - d && t.ts <= now)
                    .cloned()
                    .collect();
                window.sort_by_key(|t| t.ts);
                out.push(Emission {
                    key: key.clone(),
                    output: Output::Tuples {
                        schema: trigger.schema.clone(),
                        tuples: window,
                    },
                });
            }
            out
        }
        OperatorSpec::Filter { predicate, child } => {
            let mut out = Vec::new();
            for e in eval(child, params, trace) {
                let Output::Tuples { schema, tuples } = e.output else {
                    continue;
                };
                if predicate.attr != "ts" && !schema.attrs().contains(&predicate.attr) {
                    continue;
                }
                let kept = tuples
                    .into_iter()
                    .filter(|t| {
                        attr(t, &predicate.attr)
                            .is_some_and(|v| compare(&v, predicate.op, &predicate.value))
                    })
                    .collect();
                out.push(Emission {
                    key: e.key,
                    output: Output::Tuples {
                        schema,
                        tuples: kept,
                    },
                });
            }
            out
        }
        OperatorSpec::Join {
            predicate,
            left,
            right,
        } => {
            let mut merged: Vec<(OrderKey, usize, Emission)> = Vec::new();
            for (side, child) in [left, right].into_iter().enumerate() {
                for e in eval(child, params, trace) {
                    merged.push((e.key.clone(), side, e));
                }
            }
            merged.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
            let mut last: [Option<(Arc<Schema>, Vec<EventTuple>)>; 2] = [None, None];
            let mut out = Vec::new();
            for (key, side, e) in merged {
                let Output::Tuples { schema, tuples } = e.output else {
                    continue;
                };
                last[side] = Some((schema, tuples));
                let (Some((ls, lt)), Some((rs, rt))) = (&last[0], &last[1]) else {
                    continue;
                };
                let (la, ra) = (&predicate.left.attr, &predicate.right.attr);
                let known = |s: &Schema, a: &String| a == "ts" || s.attrs().contains(a);
                if !known(ls, la) || !known(rs, ra) {
                    continue;
                }
                let mut names: Vec<String> = ls.attrs().to_vec();
                let mut keep = Vec::new();
                for (i, a) in rs.attrs().iter().enumerate() {
                    if a == ra {
                        continue;
                    }
                    keep.push(i);
                    let n = if ls.attrs().contains(a) || names.contains(a) {
                        format!("{}.{}", predicate.right.source, a)
                    } else {
                        a.clone()
                    };
                    names.push(n);
                }
                let schema = Schema::new(names);
                let mut rows = Vec::new();
                for l in lt {
                    for r in rt {
                        if attr(l, la) != attr(r, ra) {
                            continue;
                        }
                        let mut values = l.values.clone();
                        for &i in &keep {
                            values.push(r.values[i].clone());
                        }
                        rows.push(EventTuple::new(l.ts.max(r.ts), schema.clone(), values));
                    }
                }
                out.push(Emission {
                    key,
                    output: Output::Tuples {
                        schema,
                        tuples: rows,
                    },
                });
            }
            out
        }
        OperatorSpec::Aggregate {
            func,
            attr: a,
            child,
        } => {
            let mut out = Vec::new();
            for e in eval(child, params, trace) {
                let Output::Tuples { schema, tuples } = &e.output else {
                    continue;
                };
                if a != "ts" && !schema.attrs().contains(a) {
                    continue;
                }
                let value = if *func == AggFn::Count {
                    tuples.len() as f64
                } else {
                    let xs: Option<Vec<f64>> = tuples.iter().map(|t| num(t, a)).collect();
                    let Some(xs) = xs else { continue };
                    if xs.is_empty() {
                        continue;
                    }
                    let mut acc = match func {
                        AggFn::Max => f64::NEG_INFINITY,
                        AggFn::Min => f64::INFINITY,
                        _ => 0.0,
                    };
                    for x in &xs {
                        acc = match func {
                            AggFn::Max => acc.max(*x),
                            AggFn::Min => acc.min(*x),
                            _ => acc + x,
                        };
                    }
                    if *func == AggFn::Avg {
                        acc / xs.len() as f64
                    } else {
                        acc
                    }
                };
                out.push(Emission {
                    key: e.key,
                    output: Output::Scalar { value },
                });
            }
            out
        }
        OperatorSpec::Heatmap {
            cell_size,
            area,
            child,
        } => {
            let (Some(cell), Some(area)) = (params.cell_size(cell_size), params.area(area)) else {
                return Vec::new();
            };
            if !(cell > 0.0 && cell.is_finite())
                || area.min_lat >= area.max_lat
                || area.min_lon >= area.max_lon
            {
                return Vec::new();
            }
            let rows = (((area.max_lat - area.min_lat) / cell).ceil() as usize).max(1);
            let cols = (((area.max_lon - area.min_lon) / cell).ceil() as usize).max(1);
            let mut out = Vec::new();
            'emissions: for e in eval(child, params, trace) {
                let Output::Tuples { tuples, .. } = &e.output else {
                    continue;
                };
                let mut cells = vec![0u64; rows * cols];
                for t in tuples {
                    let (Some(lat), Some(lon)) = (num(t, "latitude"), num(t, "longitude")) else {
                        continue 'emissions;
                    };
                    if !(area.min_lat..=area.max_lat).contains(&lat)
                        || !(area.min_lon..=area.max_lon).contains(&lon)
                    {
                        continue;
                    }
                    let mut r = ((lat - area.min_lat) / cell).floor() as usize;
                    let mut c = ((lon - area.min_lon) / cell).floor() as usize;
                    if r >= rows {
                        r = rows - 1;
                    }
                    if c >= cols {
                        c = cols - 1;
                    }
                    cells[r * cols + c] += 1;
                }
                out.push(Emission {
                    key: e.key,
                    output: Output::Grid(Grid { rows, cols, cells }),
                });
            }
            out
        }
        OperatorSpec::Predict { interval_ms, child } => {
            let mut last = 0i64;
            let mut out = Vec::new();
            for e in eval(child, params, trace) {
                let Output::Tuples { tuples, .. } = &e.output else {
                    continue;
                };
                let slot = e.key.ts.div_euclid(*interval_ms as i64);
                if slot <= last {
                    continue;
                }
                last = slot;
                let xs: Vec<f64> = tuples.iter().filter_map(|t| num(t, "value")).collect();
                if xs.is_empty() {
                    continue;
                }
                let mut sum = 0.0;
                for x in &xs {
                    sum += x;
                }
                out.push(Emission {
                    key: e.key,
                    output: Output::Forecast {
                        slot,
                        horizon_ms: crate::cep::PREDICT_HORIZON_MS,
                        value: sum / xs.len() as f64,
                    },
                });
            }
            out
        }
    }
}

fn attr(t: &EventTuple, name: &str) -> Option<Value> {
    if name == "ts" {
        return Some(Value::Num(t.ts as f64));
    }
    let i = t.schema.attrs().iter().position(|a| a == name)?;
    t.values.get(i).cloned()
}

fn num(t: &EventTuple, name: &str) -> Option<f64> {
    match attr(t, name)? {
        Value::Num(x) => Some(x),
        Value::Str(_) => None,
    }
}

fn compare(v: &Value, op: CmpOp, lit: &Literal) -> bool {
    let ord = match (v, lit) {
        (Value::Num(a), Literal::Num(b)) => a.partial_cmp(b),
        (Value::Str(a), Literal::Str(b)) => Some(a.as_str().cmp(b.as_str())),
        _ => return op == CmpOp::Ne,
    };
    use std::cmp::Ordering::*;
    match (op, ord) {
        (CmpOp::Lt, Some(Less)) | (CmpOp::Gt, Some(Greater)) | (CmpOp::Eq, Some(Equal)) => true,
        (CmpOp::Le, Some(Less | Equal)) | (CmpOp::Ge, Some(Greater | Equal)) => true,
        (CmpOp::Ne, o) => o != Some(Equal),
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{parse_query, samples};

    fn plug(ts: i64, seq: u64, v: f64) -> TraceEvent {
        let s = Schema::plug();
        let vals = vec![
            Value::Num(seq as f64),
            Value::Num(v),
            Value::Num(1.0),
            Value::Num(0.0),
            Value::Num(0.0),
            Value::Num(0.0),
        ];
        (
            OrderKey::new(ts, "PLUG_S1", seq),
            EventTuple::new(ts, s, vals),
        )
    }

    #[test]
    fn empty_trace_is_empty() {
        for q in samples::ALL {
            assert!(
                oracle_emissions(&parse_query(q).unwrap(), &QueryParams::default(), &[]).is_empty()
            );
        }
    }

    #[test]
    fn predict_fires_once_per_slot() {
        let trace: Vec<_> = (0..10)
            .map(|i| plug(i * 10_000, i as u64, 10.0 + i as f64))
            .collect();
        let out = oracle_emissions(
            &parse_query(samples::PREDICT_QUERY).unwrap(),
            &QueryParams::default(),
            &trace,
        );
        let slots: Vec<i64> = out
            .iter()
            .map(|e| match e.output {
                Output::Forecast { slot, .. } => slot,
                _ => -1,
            })
            .collect();
        assert_eq!(slots, vec![1, 2, 3]);
        assert_eq!(
            out[0].output,
            Output::Forecast {
                slot: 1,
                horizon_ms: 60_000,
                value: 13.0
            }
        );
    }

    #[test]
    fn window_emits_per_event() {
        let s = Schema::gps();
        let t = |ts: i64, seq| {
            (
                OrderKey::new(ts, "GPS_S1", seq),
                EventTuple::new(ts, s.clone(), vec![Value::Num(0.0); 7]),
            )
        };
        let trace = vec![t(0, 0), t(1000, 1), t(5000, 2)];
        let out = oracle_emissions(
            &parse_query(samples::WINDOW_QUERY).unwrap(),
            &QueryParams::default(),
            &trace,
        );
        let sizes: Vec<usize> = out
            .iter()
            .map(|e| e.output.tuples().unwrap().len())
            .collect();
        assert_eq!(sizes, vec![1, 2, 1]);
    }
}
