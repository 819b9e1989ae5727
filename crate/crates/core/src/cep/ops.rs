//! Operator semantics as pure functions over tuple lists.

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use super::event::Grid;
use crate::naming::{EventTuple, Schema, Value};
use crate::query::{AggFn, Area, JoinPredicate, Literal, Predicate};

#[derive(Debug, Error, Clone, PartialEq, Serialize)]
pub enum CepError {
    #[error("unknown attribute {0:?}")]
    UnknownAttribute(String),
    #[error("attribute {0:?} is not numeric")]
    NotNumeric(String),
    #[error("aggregate over an empty window")]
    EmptyWindow,
    #[error("invalid heatmap area or cell size")]
    InvalidArea,
}

pub const PREDICT_HORIZON_MS: u64 = 60_000;

/// Tuples with `ts` in `(now - duration, now]`, in buffer order.
pub fn eval_window(buffer: &[EventTuple], now: i64, duration_ms: u64) -> Vec<EventTuple> {
    let lo = now - duration_ms as i64;
    buffer
        .iter()
        .filter(|t| t.ts > lo && t.ts <= now)
        .cloned()
        .collect()
}

fn matches_literal(v: &Value, op: crate::query::CmpOp, lit: &Literal) -> bool {
    match (v, lit) {
        (Value::Num(a), Literal::Num(b)) => op.holds(a, b),
        (Value::Str(a), Literal::Str(b)) => op.holds(a, b),
        _ => op == crate::query::CmpOp::Ne,
    }
}

pub fn eval_filter(
    schema: &Schema,
    tuples: &[EventTuple],
    pred: &Predicate,
) -> Result<Vec<EventTuple>, CepError> {
    if !schema.has(&pred.attr) {
        return Err(CepError::UnknownAttribute(pred.attr.clone()));
    }
    Ok(tuples
        .iter()
        .filter(|t| {
            t.get(&pred.attr)
                .is_some_and(|v| matches_literal(&v, pred.op, &pred.value))
        })
        .cloned()
        .collect())
}

/// Schema of a join result: left attributes, then right attributes without
/// the right join key. Right names that clash get `<source>.` in front.
pub fn join_schema(left: &Schema, right: &Schema, pred: &JoinPredicate) -> Arc<Schema> {
    let mut attrs: Vec<String> = left.attrs().to_vec();
    for a in right.attrs() {
        if *a == pred.right.attr {
            continue;
        }
        if attrs.contains(a) {
            attrs.push(format!("{}.{}", pred.right.source, a));
        } else {
            attrs.push(a.clone());
        }
    }
    Schema::new(attrs)
}

/// Nested-loop equi-join; output ordered by left position, then right.
pub fn eval_join(
    left_schema: &Schema,
    left: &[EventTuple],
    right_schema: &Schema,
    right: &[EventTuple],
    pred: &JoinPredicate,
) -> Result<(Arc<Schema>, Vec<EventTuple>), CepError> {
    if !left_schema.has(&pred.left.attr) {
        return Err(CepError::UnknownAttribute(pred.left.attr.clone()));
    }
    if !right_schema.has(&pred.right.attr) {
        return Err(CepError::UnknownAttribute(pred.right.attr.clone()));
    }
    let schema = join_schema(left_schema, right_schema, pred);
    let skip = right_schema.index_of(&pred.right.attr);
    let mut out = Vec::new();
    for l in left {
        let lk = l.get(&pred.left.attr);
        for r in right {
            if r.get(&pred.right.attr) != lk {
                continue;
            }
            let mut values = l.values.clone();
            values.extend(
                r.values
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| Some(*i) != skip)
                    .map(|(_, v)| v.clone()),
            );
            out.push(EventTuple::new(l.ts.max(r.ts), schema.clone(), values));
        }
    }
    Ok((schema, out))
}

pub fn eval_aggregate(
    schema: &Schema,
    tuples: &[EventTuple],
    func: AggFn,
    attr: &str,
) -> Result<f64, CepError> {
    if !schema.has(attr) {
        return Err(CepError::UnknownAttribute(attr.to_owned()));
    }
    if func == AggFn::Count {
        return Ok(tuples.len() as f64);
    }
    if tuples.is_empty() {
        return Err(CepError::EmptyWindow);
    }
    let xs: Vec<f64> = tuples
        .iter()
        .map(|t| {
            t.get_f64(attr)
                .ok_or_else(|| CepError::NotNumeric(attr.to_owned()))
        })
        .collect::<Result<_, _>>()?;
    Ok(match func {
        AggFn::Max => xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        AggFn::Min => xs.iter().copied().fold(f64::INFINITY, f64::min),
        AggFn::Sum => xs.iter().sum(),
        AggFn::Avg => xs.iter().sum::<f64>() / xs.len() as f64,
        AggFn::Count => unreachable!(),
    })
}

pub fn grid_dims(cell: f64, area: &Area) -> Result<(usize, usize), CepError> {
    if !area.is_well_ordered() || !cell.is_finite() || cell <= 0.0 {
        return Err(CepError::InvalidArea);
    }
    let rows = ((area.max_lat - area.min_lat) / cell).ceil() as usize;
    let cols = ((area.max_lon - area.min_lon) / cell).ceil() as usize;
    Ok((rows.max(1), cols.max(1)))
}

/// Counts of `(latitude, longitude)` per cell. Points on the upper edge of
/// the area fall into the last row or column; points outside are ignored.
pub fn eval_heatmap(tuples: &[EventTuple], cell: f64, area: &Area) -> Result<Grid, CepError> {
    let (rows, cols) = grid_dims(cell, area)?;
    let mut g = Grid::zeros(rows, cols);
    for t in tuples {
        let lat = t
            .get_f64("latitude")
            .ok_or_else(|| CepError::UnknownAttribute("latitude".into()))?;
        let lon = t
            .get_f64("longitude")
            .ok_or_else(|| CepError::UnknownAttribute("longitude".into()))?;
        if lat < area.min_lat || lat > area.max_lat || lon < area.min_lon || lon > area.max_lon {
            continue;
        }
        let r = (((lat - area.min_lat) / cell).floor() as usize).min(rows - 1);
        let c = (((lon - area.min_lon) / cell).floor() as usize).min(cols - 1);
        g.cells[r * cols + c] += 1;
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub enum PredictOutcome {
    NotBoundary,
    EmptyWindow { slot: i64 },
    Forecast { slot: i64, value: f64 },
}

pub fn predict_slot(now_ms: i64, interval_ms: u64) -> i64 {
    now_ms.div_euclid(interval_ms as i64)
}

/// Mean of `value` over the window, produced once per interval slot. A slot
/// opens when the event time crosses a multiple of the interval past
/// `last_slot`.
pub fn eval_predict(
    tuples: &[EventTuple],
    now_ms: i64,
    interval_ms: u64,
    last_slot: i64,
) -> PredictOutcome {
    let slot = predict_slot(now_ms, interval_ms);
    if slot <= last_slot {
        return PredictOutcome::NotBoundary;
    }
    let xs: Vec<f64> = tuples.iter().filter_map(|t| t.get_f64("value")).collect();
    if xs.is_empty() {
        return PredictOutcome::EmptyWindow { slot };
    }
    PredictOutcome::Forecast {
        slot,
        value: xs.iter().sum::<f64>() / xs.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query::{CmpOp, QualifiedAttr};

    fn s1() -> Arc<Schema> {
        Schema::new(["latitude", "longitude"])
    }

    fn t(ts: i64, lat: f64, lon: f64) -> EventTuple {
        EventTuple::new(ts, s1(), vec![Value::Num(lat), Value::Num(lon)])
    }

    fn ts_of(v: &[EventTuple]) -> Vec<i64> {
        v.iter().map(|t| t.ts).collect()
    }

    #[test]
    fn window_interval() {
        let buf = vec![t(0, 0., 0.), t(1000, 0., 0.), t(5000, 0., 0.)];
        assert_eq!(ts_of(&eval_window(&buf, 5000, 4000)), vec![5000]);
        let buf = vec![t(2000, 0., 0.), t(3000, 0., 0.), t(5000, 0., 0.)];
        assert_eq!(
            ts_of(&eval_window(&buf, 5000, 4000)),
            vec![2000, 3000, 5000]
        );
        assert!(eval_window(&[], 5000, 4000).is_empty());
    }

    #[test]
    fn filter_latitude() {
        let ts = vec![t(1, 49., 0.), t(2, 51., 0.), t(3, 50., 0.)];
        let p = Predicate {
            attr: "latitude".into(),
            op: CmpOp::Lt,
            value: Literal::Num(50.),
        };
        assert_eq!(ts_of(&eval_filter(&s1(), &ts, &p).unwrap()), vec![1]);
        assert!(eval_filter(&s1(), &[], &p).unwrap().is_empty());
        let bad = Predicate {
            attr: "speed".into(),
            ..p
        };
        assert_eq!(
            eval_filter(&s1(), &ts, &bad),
            Err(CepError::UnknownAttribute("speed".into()))
        );
    }

    fn ts_join() -> JoinPredicate {
        JoinPredicate {
            left: QualifiedAttr {
                source: "A".into(),
                attr: "ts".into(),
            },
            right: QualifiedAttr {
                source: "B".into(),
                attr: "ts".into(),
            },
        }
    }

    #[test]
    fn join_on_ts() {
        let l = vec![t(1, 1., 1.), t(2, 2., 2.)];
        let r = vec![t(2, 3., 3.), t(3, 4., 4.)];
        let (schema, out) = eval_join(&s1(), &l, &s1(), &r, &ts_join()).unwrap();
        assert_eq!(
            schema.attrs(),
            &["latitude", "longitude", "B.latitude", "B.longitude"]
        );
        assert_eq!(ts_of(&out), vec![2]);
        assert_eq!(
            out[0].values,
            vec![
                Value::Num(2.),
                Value::Num(2.),
                Value::Num(3.),
                Value::Num(3.)
            ]
        );
        let (_, none) = eval_join(&s1(), &l, &s1(), &[t(9, 0., 0.)], &ts_join()).unwrap();
        assert!(none.is_empty());
    }

    #[test]
    fn join_duplicates_cross() {
        let l = vec![t(1, 1., 1.), t(1, 2., 2.)];
        let r = vec![t(1, 3., 3.)];
        let (_, out) = eval_join(&s1(), &l, &s1(), &r, &ts_join()).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn join_on_attribute_drops_right_key() {
        let p = JoinPredicate {
            left: QualifiedAttr {
                source: "A".into(),
                attr: "latitude".into(),
            },
            right: QualifiedAttr {
                source: "B".into(),
                attr: "latitude".into(),
            },
        };
        let (schema, out) = eval_join(&s1(), &[t(1, 5., 1.)], &s1(), &[t(4, 5., 2.)], &p).unwrap();
        assert_eq!(schema.attrs(), &["latitude", "longitude", "B.longitude"]);
        assert_eq!(out[0].ts, 4);
    }

    #[test]
    fn aggregates() {
        let s = Schema::new(["v"]);
        let ts: Vec<EventTuple> = [1., 2., 3.]
            .iter()
            .map(|v| EventTuple::new(0, s.clone(), vec![Value::Num(*v)]))
            .collect();
        assert_eq!(eval_aggregate(&s, &ts, AggFn::Avg, "v"), Ok(2.0));
        assert_eq!(eval_aggregate(&s, &ts, AggFn::Max, "v"), Ok(3.0));
        assert_eq!(eval_aggregate(&s, &ts, AggFn::Min, "v"), Ok(1.0));
        assert_eq!(eval_aggregate(&s, &ts, AggFn::Sum, "v"), Ok(6.0));
        assert_eq!(eval_aggregate(&s, &[], AggFn::Count, "v"), Ok(0.0));
        assert_eq!(
            eval_aggregate(&s, &[], AggFn::Max, "v"),
            Err(CepError::EmptyWindow)
        );
        assert!(eval_aggregate(&s, &ts, AggFn::Max, "w").is_err());
    }

    #[test]
    fn heatmap_cells() {
        let area = Area {
            min_lat: 0.,
            min_lon: 0.,
            max_lat: 10.,
            max_lon: 10.,
        };
        let g = eval_heatmap(&[t(0, 5., 5.)], 10., &area).unwrap();
        assert_eq!(g.cells, vec![1]);
        let g = eval_heatmap(&[], 5., &area).unwrap();
        assert_eq!((g.rows, g.cols, g.total()), (2, 2, 0));
        let g = eval_heatmap(&[t(0, 10., 10.), t(0, 0., 0.), t(0, 11., 5.)], 5., &area).unwrap();
        assert_eq!(g.cells, vec![1, 0, 0, 1]);
        let g = eval_heatmap(&[], 3., &area).unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        let flipped = Area {
            min_lat: 10.,
            ..area
        };
        assert_eq!(eval_heatmap(&[], 1., &flipped), Err(CepError::InvalidArea));
    }

    #[test]
    fn predict_boundaries() {
        let s = Schema::new(["value"]);
        let w: Vec<EventTuple> = [10., 20.]
            .iter()
            .map(|v| EventTuple::new(0, s.clone(), vec![Value::Num(*v)]))
            .collect();
        assert_eq!(
            eval_predict(&w, 30_000, 30_000, 0),
            PredictOutcome::Forecast {
                slot: 1,
                value: 15.0
            }
        );
        assert_eq!(
            eval_predict(&w, 45_000, 30_000, 1),
            PredictOutcome::NotBoundary
        );
        assert_eq!(
            eval_predict(&[], 60_000, 30_000, 1),
            PredictOutcome::EmptyWindow { slot: 2 }
        );
    }
}
