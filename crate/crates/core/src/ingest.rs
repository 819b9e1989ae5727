//! Dataset loading and synthetic streams for the GPS and smart-plug schemas.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::naming::{EventTuple, Schema, Value};
use crate::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemaKind {
    Gps,
    Plug,
}

impl SchemaKind {
    pub fn schema(self) -> Arc<Schema> {
        match self {
            SchemaKind::Gps => Schema::gps(),
            SchemaKind::Plug => Schema::plug(),
        }
    }

    /// Checks the value ranges of a record.
    fn in_range(self, schema: &Schema, values: &[f64]) -> bool {
        let get = |a: &str| schema.index_of(a).map(|i| values[i]);
        match self {
            SchemaKind::Gps => {
                get("latitude").is_some_and(|x| (-90.0..=90.0).contains(&x))
                    && get("longitude").is_some_and(|x| (-180.0..=180.0).contains(&x))
            }
            SchemaKind::Plug => get("value").is_some_and(|x| x >= 0.0),
        }
    }

    /// Uniform values within the schema's ranges.
    pub fn sample_values<R: Rng>(self, rng: &mut R, id: u32) -> Vec<Value> {
        let id = f64::from(id);
        let mut u = |lo: f64, hi: f64| Value::Num(rng.random_range(lo..hi));
        match self {
            SchemaKind::Gps => vec![
                Value::Num(id),
                u(-90.0, 90.0),
                u(-180.0, 180.0),
                u(0.0, 3000.0),
                u(1.0, 50.0),
                u(0.0, 1000.0),
                u(0.0, 40.0),
            ],
            SchemaKind::Plug => {
                let v = u(0.0, 100.0);
                let prop = Value::Num(f64::from(rng.random_range(0..2u8)));
                vec![
                    Value::Num(id),
                    v,
                    prop,
                    Value::Num(id),
                    Value::Num(0.0),
                    Value::Num(0.0),
                ]
            }
        }
    }
}

impl FromStr for SchemaKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gps" => Ok(SchemaKind::Gps),
            "plug" => Ok(SchemaKind::Plug),
            other => Err(format!("unknown schema {other:?}, expected gps or plug")),
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("header does not match the schema, missing {missing:?}")]
    SchemaMismatch { missing: Vec<String> },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Lazily parsed CSV records. Malformed rows are skipped, logged and
/// counted.
pub struct CsvStream<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    kind: SchemaKind,
    schema: Arc<Schema>,
    ts_col: usize,
    cols: Vec<usize>,
    line: u64,
    pub skipped: u64,
}

impl<R: Read> Iterator for CsvStream<R> {
    type Item = EventTuple;

    fn next(&mut self) -> Option<EventTuple> {
        loop {
            let rec = self.records.next()?;
            self.line += 1;
            match rec.ok().and_then(|r| self.parse(&r)) {
                Some(t) => return Some(t),
                None => {
                    self.skipped += 1;
                    log::warn!("skipping malformed row {}", self.line);
                }
            }
        }
    }
}

impl<R: Read> CsvStream<R> {
    fn parse(&self, r: &csv::StringRecord) -> Option<EventTuple> {
        let ts: i64 = r.get(self.ts_col)?.trim().parse().ok()?;
        let nums: Vec<f64> = self
            .cols
            .iter()
            .map(|&c| {
                r.get(c)?
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
            })
            .collect::<Option<_>>()?;
        if !self.kind.in_range(&self.schema, &nums) {
            return None;
        }
        Some(EventTuple::new(
            ts,
            self.schema.clone(),
            nums.into_iter().map(Value::Num).collect(),
        ))
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }
}

/// Reads records from `reader`; `,` and `|` delimiters are both accepted,
/// decided by the header line.
pub fn read_csv<R: Read>(reader: R, kind: SchemaKind) -> Result<CsvStream<impl Read>, IngestError> {
    let mut buf = BufReader::new(reader);
    let mut header = String::new();
    buf.read_line(&mut header)?;
    let delimiter = if header.contains('|') { b'|' } else { b',' };
    let names: Vec<String> = header
        .trim_end()
        .split(delimiter as char)
        .map(|s| s.trim().to_owned())
        .collect();
    let schema = kind.schema();
    let col = |a: &str| names.iter().position(|n| n == a);
    let missing: Vec<String> = std::iter::once("ts")
        .chain(schema.attrs().iter().map(String::as_str))
        .filter(|a| col(a).is_none())
        .map(str::to_owned)
        .collect();
    if !missing.is_empty() {
        return Err(IngestError::SchemaMismatch { missing });
    }
    let ts_col = col("ts").expect("checked");
    let cols = schema
        .attrs()
        .iter()
        .map(|a| col(a).expect("checked"))
        .collect();
    let records = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(buf)
        .into_records();
    Ok(CsvStream {
        records,
        kind,
        schema,
        ts_col,
        cols,
        line: 1,
        skipped: 0,
    })
}

pub fn load_csv(path: &Path, kind: SchemaKind) -> Result<CsvStream<impl Read>, IngestError> {
    read_csv(File::open(path)?, kind)
}

/// Poisson arrivals with uniformly drawn values. Yields the arrival time
/// in microseconds with each tuple; tuple timestamps are in milliseconds.
pub struct SynthStream {
    rng: ChaCha8Rng,
    gap: Exp<f64>,
    kind: SchemaKind,
    schema: Arc<Schema>,
    now: f64,
    end: SimTime,
    id: u32,
}

impl Iterator for SynthStream {
    type Item = (SimTime, EventTuple);

    fn next(&mut self) -> Option<Self::Item> {
        self.now += self.gap.sample(&mut self.rng) * 1e6;
        let t = self.now as SimTime;
        if t >= self.end {
            return None;
        }
        let values = self.kind.sample_values(&mut self.rng, self.id);
        Some((
            t,
            EventTuple::new((t / 1000) as i64, self.schema.clone(), values),
        ))
    }
}

/// Panics if `rate` is not positive and finite.
pub fn synth_stream(kind: SchemaKind, rate: f64, duration: SimTime, seed: u64) -> SynthStream {
    synth_stream_on(kind, rate, duration, seed, 0)
}

/// Like [`synth_stream`], drawing from ChaCha stream number `stream` so that
/// several producers sharing one seed stay independent.
pub fn synth_stream_on(
    kind: SchemaKind,
    rate: f64,
    duration: SimTime,
    seed: u64,
    stream: u64,
) -> SynthStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    SynthStream {
        rng,
        gap: Exp::new(rate).expect("rate must be positive"),
        kind,
        schema: kind.schema(),
        now: 0.0,
        end: duration,
        id: stream as u32 + 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GPS: &str = "ts,s_id,latitude,longitude,altitude,accuracy,distance,speed\n\
        1,1,49.5,8.6,100,5,0,1.5\n\
        2,1,49.6,8.7,100,5,10,2\n\
        3,1,49.7,8.8,100,5,20,x\n";

    #[test]
    fn reads_and_skips() {
        let mut s = read_csv(GPS.as_bytes(), SchemaKind::Gps).unwrap();
        let got: Vec<i64> = s.by_ref().map(|t| t.ts).collect();
        assert_eq!(got, vec![1, 2]);
        assert_eq!(s.skipped, 1);
    }

    #[test]
    fn pipe_delimited() {
        let text = "ts|id|value|property|plug_id|household_id|house_id\n5|1|12.5|1|1|0|0\n";
        let t: Vec<_> = read_csv(text.as_bytes(), SchemaKind::Plug)
            .unwrap()
            .collect();
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].get_f64("value"), Some(12.5));
    }

    #[test]
    fn schema_mismatch() {
        let err = read_csv("ts,s_id,longitude\n".as_bytes(), SchemaKind::Gps)
            .err()
            .unwrap();
        match err {
            IngestError::SchemaMismatch { missing } => {
                assert!(missing.contains(&"latitude".to_string()))
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a: Vec<_> = synth_stream(SchemaKind::Gps, 1000.0, 1_000_000, 3).collect();
        let b: Vec<_> = synth_stream(SchemaKind::Gps, 1000.0, 1_000_000, 3).collect();
        assert_eq!(a, b);
        let c: Vec<_> = synth_stream_on(SchemaKind::Gps, 1000.0, 1_000_000, 3, 1).collect();
        assert_ne!(a, c);
    }
}
