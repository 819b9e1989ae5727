use std::fmt::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::naming::{decode_tuples, encode_tuples, EventTuple, Schema, TupleError};

/// Processing order of emissions: event time, then source, then the
/// producer's sequence number.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct OrderKey {
    pub ts: i64,
    pub source: Arc<str>,
    pub seq: u64,
}

impl OrderKey {
    pub fn new(ts: i64, source: &str, seq: u64) -> Self {
        OrderKey {
            ts,
            source: source.into(),
            seq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    /// Row-major counts.
    pub cells: Vec<u64>,
}

impl Grid {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Grid {
            rows,
            cols,
            cells: vec![0; rows * cols],
        }
    }

    pub fn get(&self, r: usize, c: usize) -> u64 {
        self.cells[r * self.cols + c]
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Output {
    Tuples {
        #[serde(skip)]
        schema: Arc<Schema>,
        #[serde(serialize_with = "ser_tuple_count")]
        tuples: Vec<EventTuple>,
    },
    Scalar {
        value: f64,
    },
    Grid(Grid),
    Forecast {
        slot: i64,
        horizon_ms: u64,
        value: f64,
    },
}

fn ser_tuple_count<S: serde::Serializer>(t: &[EventTuple], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(t.len() as u64)
}

impl Output {
    pub fn kind(&self) -> &'static str {
        match self {
            Output::Tuples { .. } => "tuples",
            Output::Scalar { .. } => "scalar",
            Output::Grid(_) => "grid",
            Output::Forecast { .. } => "forecast",
        }
    }

    pub fn tuples(&self) -> Option<&[EventTuple]> {
        match self {
            Output::Tuples { tuples, .. } => Some(tuples),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Emission {
    pub key: OrderKey,
    pub output: Output,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EventCodecError {
    #[error("missing '#ce' header line")]
    MissingHeader,
    #[error("bad header field {0:?}")]
    BadField(String),
    #[error("unknown output kind {0:?}")]
    UnknownKind(String),
    #[error("bad body: {0}")]
    BadBody(String),
    #[error(transparent)]
    Tuples(#[from] TupleError),
}

/// Text form: a `#ce ts= src= seq= kind=` header line followed by the
/// tuple records, the scalar, the grid as CSV rows, or the forecast value.
pub fn encode_emission(e: &Emission) -> Result<String, EventCodecError> {
    let mut s = format!(
        "#ce ts={} src={} seq={} kind={}",
        e.key.ts,
        e.key.source,
        e.key.seq,
        e.output.kind()
    );
    match &e.output {
        Output::Tuples { schema, tuples } => {
            s.push('\n');
            s.push_str(&encode_tuples(schema, tuples)?);
        }
        Output::Scalar { value } => {
            let _ = writeln!(s, "\n{value}");
        }
        Output::Grid(g) => {
            let _ = writeln!(s, " rows={} cols={}", g.rows, g.cols);
            for r in 0..g.rows {
                let row: Vec<String> = g.cells[r * g.cols..(r + 1) * g.cols]
                    .iter()
                    .map(|c| c.to_string())
                    .collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
        }
        Output::Forecast {
            slot,
            horizon_ms,
            value,
        } => {
            let _ = writeln!(s, " slot={slot} horizon_ms={horizon_ms}\n{value}");
        }
    }
    Ok(s)
}

fn fields(header: &str) -> Result<Vec<(&str, &str)>, EventCodecError> {
    header
        .split(' ')
        .skip(1)
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| EventCodecError::BadField(kv.to_owned()))
        })
        .collect()
}

fn field<'a, T: std::str::FromStr>(
    fs: &[(&'a str, &'a str)],
    key: &str,
) -> Result<T, EventCodecError> {
    let v = fs
        .iter()
        .find(|(k, _)| *k == key)
        .ok_or_else(|| EventCodecError::BadField(key.to_owned()))?
        .1;
    v.parse()
        .map_err(|_| EventCodecError::BadField(format!("{key}={v}")))
}

pub fn decode_emission(text: &str) -> Result<Emission, EventCodecError> {
    let (header, body) = text.split_once('\n').unwrap_or((text, ""));
    if !header.starts_with("#ce ") {
        return Err(EventCodecError::MissingHeader);
    }
    let fs = fields(header)?;
    let src: String = field(&fs, "src")?;
    let key = OrderKey::new(field(&fs, "ts")?, &src, field(&fs, "seq")?);
    let kind: String = field(&fs, "kind")?;
    let bad = |m: &str| EventCodecError::BadBody(m.to_owned());
    let output = match kind.as_str() {
        "tuples" => {
            let (schema, tuples) = decode_tuples(body)?;
            Output::Tuples { schema, tuples }
        }
        "scalar" => Output::Scalar {
            value: body.trim_end().parse().map_err(|_| bad("scalar"))?,
        },
        "grid" => {
            let rows: usize = field(&fs, "rows")?;
            let cols: usize = field(&fs, "cols")?;
            let mut cells = Vec::with_capacity(rows * cols);
            for line in body.lines() {
                for c in line.split(',') {
                    cells.push(c.parse().map_err(|_| bad("grid cell"))?);
                }
            }
            if cells.len() != rows * cols {
                return Err(bad("grid size"));
            }
            Output::Grid(Grid { rows, cols, cells })
        }
        "forecast" => Output::Forecast {
            slot: field(&fs, "slot")?,
            horizon_ms: field(&fs, "horizon_ms")?,
            value: body.trim_end().parse().map_err(|_| bad("forecast"))?,
        },
        other => return Err(EventCodecError::UnknownKind(other.to_owned())),
    };
    Ok(Emission { key, output })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::naming::Value;

    fn key() -> OrderKey {
        OrderKey::new(1500, "GPS_S1", 7)
    }

    #[test]
    fn order_key_sorts_by_ts_then_source_then_seq() {
        let mut ks = [
            OrderKey::new(2, "A", 0),
            OrderKey::new(1, "B", 5),
            OrderKey::new(1, "A", 9),
            OrderKey::new(1, "A", 3),
        ];
        ks.sort();
        let seqs: Vec<u64> = ks.iter().map(|k| k.seq).collect();
        assert_eq!(seqs, vec![3, 9, 5, 0]);
    }

    #[test]
    fn round_trips() {
        let s = Schema::new(["value"]);
        let outputs = vec![
            Output::Tuples {
                schema: s.clone(),
                tuples: vec![EventTuple::new(1500, s.clone(), vec![Value::Num(3.25)])],
            },
            Output::Tuples {
                schema: s,
                tuples: vec![],
            },
            Output::Scalar { value: -0.125 },
            Output::Grid(Grid {
                rows: 2,
                cols: 3,
                cells: vec![1, 0, 2, 0, 0, 9],
            }),
            Output::Forecast {
                slot: 3,
                horizon_ms: 60_000,
                value: 15.5,
            },
        ];
        for output in outputs {
            let e = Emission { key: key(), output };
            let text = encode_emission(&e).unwrap();
            assert_eq!(decode_emission(&text).unwrap(), e, "{text}");
        }
    }

    #[test]
    fn grid_text_is_row_major_csv() {
        let e = Emission {
            key: key(),
            output: Output::Grid(Grid {
                rows: 2,
                cols: 2,
                cells: vec![1, 2, 3, 4],
            }),
        };
        assert_eq!(
            encode_emission(&e).unwrap(),
            "#ce ts=1500 src=GPS_S1 seq=7 kind=grid rows=2 cols=2\n1,2\n3,4\n"
        );
    }

    #[test]
    fn rejects_garbage() {
        assert_eq!(
            decode_emission("ts|a\n"),
            Err(EventCodecError::MissingHeader)
        );
        assert!(decode_emission("#ce ts=1 src=A seq=1 kind=blob\n").is_err());
        assert!(decode_emission("#ce ts=1 src=A seq=1 kind=grid rows=1 cols=2\n1\n").is_err());
    }
}
