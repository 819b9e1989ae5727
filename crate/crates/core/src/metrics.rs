//! Loss, accuracy, latency and throughput figures.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cep::{encode_emission, Emission, OrderKey, Output};
use crate::naming::Name;
use crate::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("invalid counts: total {total}, processed {processed}")]
    InvalidCounts { total: u64, processed: u64 },
    #[error("F1 is undefined without any positives")]
    Undefined,
}

/// `(total - processed) / total`.
pub fn loss_rate(total: u64, processed: u64) -> Result<f64, MetricsError> {
    if total == 0 || processed > total {
        return Err(MetricsError::InvalidCounts { total, processed });
    }
    Ok((total - processed) as f64 / total as f64)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AccuracyCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

/// F1 in percent: `100 * 2tp / (2tp + fp + fn)`.
pub fn f1_score(c: &AccuracyCounts) -> Result<f64, MetricsError> {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        return Err(MetricsError::Undefined);
    }
    Ok(100.0 * (2 * c.tp) as f64 / denom as f64)
}

/// A result as seen by a consumer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplexEvent {
    pub qname: Name,
    pub emission: Emission,
}

/// Identity of a result for accuracy checks: query, trigger key and a
/// digest of the encoded payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    pub qname: Name,
    pub key: OrderKey,
    pub digest: [u8; 32],
    pub slot: Option<i64>,
}

impl Fingerprint {
    pub fn of(qname: &Name, e: &Emission) -> Self {
        let text = encode_emission(e).unwrap_or_else(|_| format!("{:?}", e.output));
        let slot = match e.output {
            Output::Forecast { slot, .. } => Some(slot),
            _ => None,
        };
        Fingerprint {
            qname: qname.clone(),
            key: e.key.clone(),
            digest: Sha256::digest(text.as_bytes()).into(),
            slot,
        }
    }
}

/// Matches delivered results to the reference by query and trigger key.
/// A delivered result with no reference counterpart, or with a different
/// payload, is a false positive. For forecasts, slots between the first and
/// last seen slot that neither list fills count as true negatives.
pub fn compare_to_oracle(delivered: &[ComplexEvent], oracle: &[ComplexEvent]) -> AccuracyCounts {
    let fp = |v: &[ComplexEvent]| {
        v.iter()
            .map(|c| Fingerprint::of(&c.qname, &c.emission))
            .collect::<Vec<_>>()
    };
    compare_fingerprints(&fp(delivered), &fp(oracle))
}

pub fn compare_fingerprints(delivered: &[Fingerprint], oracle: &[Fingerprint]) -> AccuracyCounts {
    let mut expected: BTreeMap<(&Name, &OrderKey), &[u8; 32]> = BTreeMap::new();
    for e in oracle {
        expected.insert((&e.qname, &e.key), &e.digest);
    }
    let mut c = AccuracyCounts::default();
    let mut matched = BTreeSet::new();
    for d in delivered {
        let k = (&d.qname, &d.key);
        match expected.get(&k) {
            Some(dg) if **dg == d.digest && matched.insert(k) => c.tp += 1,
            _ => c.fp += 1,
        }
    }
    c.fn_ = (expected.len() - matched.len()) as u64;
    let mut slots: BTreeMap<&Name, BTreeSet<i64>> = BTreeMap::new();
    for e in oracle.iter().chain(delivered) {
        if let Some(slot) = e.slot {
            slots.entry(&e.qname).or_default().insert(slot);
        }
    }
    for s in slots.values() {
        let (lo, hi) = (
            *s.first().expect("non-empty"),
            *s.last().expect("non-empty"),
        );
        c.tn += (hi - lo + 1) as u64 - s.len() as u64;
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub p90: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

pub fn summarize(samples: &[f64]) -> Option<Summary> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    Some(Summary {
        count: s.len(),
        mean: s.iter().sum::<f64>() / s.len() as f64,
        min: s[0],
        max: s[s.len() - 1],
        p90: percentile(&s, 90.0)?,
        p95: percentile(&s, 95.0)?,
        p99: percentile(&s, 99.0)?,
    })
}

/// Counts per whole second of `[from, to)`.
pub fn throughput_series(times: &[SimTime], from: SimTime, to: SimTime) -> Vec<u64> {
    let bins = to.saturating_sub(from).div_ceil(1_000_000) as usize;
    let mut out = vec![0; bins];
    for &t in times {
        if t >= from && t < to {
            out[((t - from) / 1_000_000) as usize] += 1;
        }
    }
    out
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ControlCounts {
    pub adds: u64,
    pub removes: u64,
    pub interests: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct QueryReport {
    pub consumer: String,
    pub query: String,
    pub qname: String,
    pub mode: String,
    /// Events the producers generated for the query's sources.
    pub generated: u64,
    /// Events that reached the point where they are consumed.
    pub processed: u64,
    /// Results handed to the consumer application.
    pub delivered: u64,
    pub loss_rate: f64,
    pub throughput_mean: f64,
    pub throughput: Vec<u64>,
    pub latency_ms: Option<Summary>,
    #[serde(skip)]
    pub latency_samples_ms: Vec<f64>,
    pub accuracy: Option<AccuracyCounts>,
    pub f1: Option<f64>,
    pub control: ControlCounts,
    pub fifo_violations: u64,
    pub duplicate_deliveries: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LinkReport {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub max_queue: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub duration_us: SimTime,
    pub warmup_us: SimTime,
    pub queries: Vec<QueryReport>,
    pub links: BTreeMap<String, LinkReport>,
    pub event_drops: u64,
    pub nodes: BTreeMap<String, serde_json::Value>,
    pub placements: Vec<serde_json::Value>,
    pub events_simulated: u64,
    pub trace_hash: String,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// `latency.csv` (query, sample_ms) and `throughput.csv` (query, second, events).
    pub fn write_csv(&self, dir: &Path) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_path(dir.join("latency.csv"))?;
        w.write_record(["query", "latency_ms"])?;
        for (i, q) in self.queries.iter().enumerate() {
            for s in &q.latency_samples_ms {
                w.write_record([i.to_string(), s.to_string()])?;
            }
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(dir.join("throughput.csv"))?;
        w.write_record(["query", "second", "events"])?;
        for (i, q) in self.queries.iter().enumerate() {
            for (s, n) in q.throughput.iter().enumerate() {
                w.write_record([i.to_string(), s.to_string(), n.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss() {
        assert_eq!(loss_rate(100, 90).unwrap(), 0.1);
        assert_eq!(loss_rate(100, 100).unwrap(), 0.0);
        assert!(loss_rate(0, 0).is_err());
        assert!(loss_rate(5, 6).is_err());
    }

    #[test]
    fn f1() {
        let c = |tp, fp, fn_| AccuracyCounts { tp, fp, fn_, tn: 0 };
        assert_eq!(f1_score(&c(10, 0, 0)).unwrap(), 100.0);
        assert_eq!(f1_score(&c(1, 1, 1)).unwrap(), 50.0);
        assert_eq!(f1_score(&c(0, 0, 0)), Err(MetricsError::Undefined));
    }

    fn ev(ts: i64, v: f64) -> ComplexEvent {
        ComplexEvent {
            qname: Name::parse("/q").unwrap(),
            emission: Emission {
                key: OrderKey::new(ts, "S", ts as u64),
                output: Output::Scalar { value: v },
            },
        }
    }

    #[test]
    fn oracle_matching() {
        let o = vec![ev(1, 1.0), ev(2, 2.0), ev(3, 3.0)];
        let same = compare_to_oracle(&o, &o);
        assert_eq!((same.tp, same.fp, same.fn_), (3, 0, 0));
        let missing = compare_to_oracle(&o[..2], &o);
        assert_eq!(missing.fn_, 1);
        let wrong = compare_to_oracle(&[ev(1, 1.0), ev(2, 9.0), ev(3, 3.0)], &o);
        assert_eq!((wrong.tp, wrong.fp, wrong.fn_), (2, 1, 1));
    }

    #[test]
    fn forecast_true_negatives() {
        let f = |slot: i64| ComplexEvent {
            qname: Name::parse("/q").unwrap(),
            emission: Emission {
                key: OrderKey::new(slot * 30_000, "S", slot as u64),
                output: Output::Forecast {
                    slot,
                    horizon_ms: 60_000,
                    value: 1.0,
                },
            },
        };
        let o = vec![f(1), f(4)];
        let c = compare_to_oracle(&o, &o);
        assert_eq!(c.tn, 2);
    }

    #[test]
    fn percentiles_and_bins() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = summarize(&xs).unwrap();
        assert_eq!((s.p90, s.p95, s.p99, s.mean), (90.0, 95.0, 99.0, 50.5));
        assert_eq!(
            throughput_series(&[0, 999_999, 1_000_000, 2_500_000], 0, 3_000_000),
            vec![2, 1, 1]
        );
    }
}
