use std::fmt::{self, Write as _};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TupleError {
    #[error("payload is empty")]
    Empty,
    #[error("header must start with 'ts', got {0:?}")]
    BadHeader(String),
    #[error("line {line}: expected {expected} fields, got {got}")]
    FieldCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: bad timestamp {value:?}")]
    BadTimestamp { line: usize, value: String },
    #[error("value {0:?} cannot be written in the text format")]
    Unencodable(String),
    #[error("tuples in one payload must share a schema")]
    MixedSchema,
    #[error("payload is not UTF-8")]
    NotUtf8,
}

/// Ordered attribute names following the leading `ts`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Schema {
    attrs: Vec<String>,
}

impl Schema {
    pub fn new<I, S>(attrs: I) -> Arc<Schema>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Arc::new(Schema {
            attrs: attrs.into_iter().map(Into::into).collect(),
        })
    }

    pub fn attrs(&self) -> &[String] {
        &self.attrs
    }

    pub fn index_of(&self, attr: &str) -> Option<usize> {
        self.attrs.iter().position(|a| a == attr)
    }

    pub fn has(&self, attr: &str) -> bool {
        attr == "ts" || self.index_of(attr).is_some()
    }

    pub fn gps() -> Arc<Schema> {
        Schema::new([
            "s_id",
            "latitude",
            "longitude",
            "altitude",
            "accuracy",
            "distance",
            "speed",
        ])
    }

    pub fn plug() -> Arc<Schema> {
        Schema::new([
            "id",
            "value",
            "property",
            "plug_id",
            "household_id",
            "house_id",
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Str(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Str(_) => None,
        }
    }

    fn parse(s: &str) -> Value {
        match s.parse::<f64>() {
            Ok(x) => Value::Num(x),
            Err(_) => Value::Str(s.to_owned()),
        }
    }

    fn check_encodable(&self) -> Result<(), TupleError> {
        match self {
            Value::Num(x) if !x.is_finite() => Err(TupleError::Unencodable(x.to_string())),
            Value::Str(s) if s.contains(['|', '\n', '\r']) || s.parse::<f64>().is_ok() => {
                Err(TupleError::Unencodable(s.clone()))
            }
            _ => Ok(()),
        }
    }
}

impl Value {
    fn write_to(&self, out: &mut String) {
        match self {
            Value::Num(x) if x.fract() == 0.0 && x.abs() < 1e15 => {
                out.push_str(itoa::Buffer::new().format(*x as i64))
            }
            Value::Num(x) if x.is_finite() => out.push_str(ryu::Buffer::new().format_finite(*x)),
            Value::Num(x) => {
                let _ = write!(out, "{x}");
            }
            Value::Str(s) => out.push_str(s),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        self.write_to(&mut s);
        f.write_str(&s)
    }
}

/// A timestamped record `<ts, a_1..a_m>`; `ts` is in milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTuple {
    pub ts: i64,
    pub schema: Arc<Schema>,
    pub values: Vec<Value>,
}

impl EventTuple {
    pub fn new(ts: i64, schema: Arc<Schema>, values: Vec<Value>) -> Self {
        debug_assert_eq!(schema.attrs().len(), values.len());
        EventTuple { ts, schema, values }
    }

    /// Attribute lookup; `ts` resolves to the timestamp.
    pub fn get(&self, attr: &str) -> Option<Value> {
        if attr == "ts" {
            return Some(Value::Num(self.ts as f64));
        }
        self.schema.index_of(attr).map(|i| self.values[i].clone())
    }

    pub fn get_f64(&self, attr: &str) -> Option<f64> {
        if attr == "ts" {
            return Some(self.ts as f64);
        }
        self.schema
            .index_of(attr)
            .and_then(|i| self.values[i].as_f64())
    }
}

fn check_name(attr: &str) -> Result<(), TupleError> {
    if attr.is_empty() || attr.contains(['|', '\n', '\r']) {
        Err(TupleError::Unencodable(attr.to_owned()))
    } else {
        Ok(())
    }
}

/// Writes the header line followed by one `ts|v1|…|vm` record per tuple.
pub fn encode_tuples(schema: &Schema, tuples: &[EventTuple]) -> Result<String, TupleError> {
    let mut out = String::with_capacity(16 * (schema.attrs().len() + 1) * (tuples.len() + 1));
    out.push_str("ts");
    for a in schema.attrs() {
        check_name(a)?;
        out.push('|');
        out.push_str(a);
    }
    out.push('\n');
    for t in tuples {
        if *t.schema != *schema {
            return Err(TupleError::MixedSchema);
        }
        out.push_str(itoa::Buffer::new().format(t.ts));
        for v in &t.values {
            v.check_encodable()?;
            out.push('|');
            v.write_to(&mut out);
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn decode_tuples(text: &str) -> Result<(Arc<Schema>, Vec<EventTuple>), TupleError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(TupleError::Empty)?;
    let mut cols = header.split('|');
    if cols.next() != Some("ts") {
        return Err(TupleError::BadHeader(header.to_owned()));
    }
    let schema = Schema::new(cols);
    let width = schema.attrs().len() + 1;
    let mut tuples = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split('|').collect();
        if fields.len() != width {
            return Err(TupleError::FieldCount {
                line: i + 2,
                expected: width,
                got: fields.len(),
            });
        }
        let ts = fields[0]
            .parse::<i64>()
            .map_err(|_| TupleError::BadTimestamp {
                line: i + 2,
                value: fields[0].to_owned(),
            })?;
        let values = fields[1..].iter().map(|s| Value::parse(s)).collect();
        tuples.push(EventTuple {
            ts,
            schema: schema.clone(),
            values,
        });
    }
    Ok((schema, tuples))
}

pub fn decode_tuples_bytes(b: &[u8]) -> Result<(Arc<Schema>, Vec<EventTuple>), TupleError> {
    decode_tuples(std::str::from_utf8(b).map_err(|_| TupleError::NotUtf8)?)
}

/// Timestamp of the first record, read without decoding the rest.
pub fn peek_ts(payload: &[u8]) -> Option<i64> {
    let nl = payload.iter().position(|&c| c == b'\n')?;
    let rest = &payload[nl + 1..];
    let end = rest
        .iter()
        .position(|&c| c == b'|' || c == b'\n')
        .unwrap_or(rest.len());
    std::str::from_utf8(&rest[..end]).ok()?.parse().ok()
}
