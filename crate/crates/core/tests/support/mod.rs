//! Fixtures shared by the integration tests: random traces, scenario
//! builders and the forwarding-plane property checks.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use bytes::Bytes;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inetcep::cep::{build_operator_tree, Emission, OrderKey, QueryRuntime};
use inetcep::ingest::SchemaKind;
use inetcep::metrics::MetricsReport;
use inetcep::naming::{EventTuple, Name};
use inetcep::oracle::{oracle_emissions, TraceEvent};
use inetcep::query::{parse_query, samples, QueryParams};
use inetcep::sim::{Scenario, Simulator};
use inetcep::tables::{ContentStore, FaceId, Pit};

/// Sources a sample query reads, with their schemas.
pub fn sources_of(query: &str) -> Vec<(&'static str, SchemaKind)> {
    let ast = parse_query(query).expect("sample queries parse");
    ast.sources()
        .iter()
        .map(|s| match s.as_str() {
            "GPS_S1" => ("GPS_S1", SchemaKind::Gps),
            "GPS_S2" => ("GPS_S2", SchemaKind::Gps),
            "PLUG_S1" => ("PLUG_S1", SchemaKind::Plug),
            other => panic!("no fixture schema for {other}"),
        })
        .collect()
}

/// Up to `max_len` events over `sources`, timestamps non-decreasing. Gaps
/// are coarse so that windows hold a varying number of tuples and sources
/// share timestamps often enough for joins to match.
pub fn random_trace(
    rng: &mut ChaCha8Rng,
    sources: &[(&str, SchemaKind)],
    max_len: usize,
) -> Vec<TraceEvent> {
    const GAPS: [i64; 6] = [0, 0, 250, 500, 1000, 3000];
    let len = rng.random_range(0..=max_len);
    let mut ts = rng.random_range(0..10_000);
    let mut seq = vec![0u64; sources.len()];
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        ts += GAPS[rng.random_range(0..GAPS.len())];
        let i = rng.random_range(0..sources.len());
        let (name, kind) = sources[i];
        let values = kind.sample_values(rng, i as u32 + 1);
        out.push((
            OrderKey::new(ts, name, seq[i]),
            EventTuple::new(ts, kind.schema(), values),
        ));
        seq[i] += 1;
    }
    out
}

/// Feeds `trace` to a fresh runtime in random batch sizes and collects
/// every root emission, including what the final flush releases.
pub fn engine_emissions(rng: &mut ChaCha8Rng, query: &str, trace: &[TraceEvent]) -> Vec<Emission> {
    let params = QueryParams::default();
    let plan = build_operator_tree(&parse_query(query).unwrap()).unwrap();
    let mut rt = QueryRuntime::new(&plan, &params).unwrap();
    let mut out = Vec::new();
    let mut rest = trace;
    while !rest.is_empty() {
        let n = rng.random_range(1..=rest.len().min(20));
        out.extend(rt.process(&rest[..n]));
        rest = &rest[n..];
    }
    out.extend(rt.finish());
    out
}

/// Engine and oracle agree on `cases` random traces for every sample
/// query. Returns the first disagreement.
pub fn engine_matches_oracle(seed: u64, cases: usize, max_len: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut compared = 0;
    for q in samples::ALL {
        let ast = parse_query(q).unwrap();
        let sources = sources_of(q);
        for case in 0..cases {
            let trace = random_trace(&mut rng, &sources, max_len);
            let got = engine_emissions(&mut rng, q, &trace);
            let want = oracle_emissions(&ast, &QueryParams::default(), &trace);
            if got != want {
                let at = got
                    .iter()
                    .zip(&want)
                    .position(|(a, b)| a != b)
                    .unwrap_or(got.len().min(want.len()));
                return Err(format!(
                    "{q}: case {case} ({} events) differs at emission {at}: engine {} vs oracle {}",
                    trace.len(),
                    got.len(),
                    want.len()
                ));
            }
            compared += got.len();
        }
    }
    Ok(compared)
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn failed<T: std::fmt::Debug>(
    r: Result<(), proptest::test_runner::TestError<T>>,
) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

fn small_name(i: u8) -> Name {
    Name::parse(&format!("/S{}/q{}", i % 2, i)).unwrap()
}

/// Adding a face twice leaves the face set as a plain set of everything
/// added; the continuous flag is the one given at creation.
pub fn pit_face_idempotence(cases: u32) -> Result<(), String> {
    let ops = prop::collection::vec(
        (0u8..5, 2u32..8, any::<bool>(), 0u64..10_000_000, 1usize..4),
        1..60,
    );
    failed(runner(cases).run(&ops, |ops| {
        let mut pit = Pit::default();
        let mut faces: BTreeMap<u8, BTreeSet<u32>> = BTreeMap::new();
        let mut flag: BTreeMap<u8, bool> = BTreeMap::new();
        for (n, face, continuous, now, repeat) in ops {
            for _ in 0..repeat {
                pit.add_face(&small_name(n), FaceId(face), continuous, now);
            }
            faces.entry(n).or_default().insert(face);
            flag.entry(n).or_insert(continuous);
            let e = pit.lookup(&small_name(n)).expect("entry exists after add");
            let got: BTreeSet<u32> = e.faces.iter().map(|f| f.0).collect();
            prop_assert_eq!(&got, &faces[&n]);
            prop_assert_eq!(e.continuous, flag[&n]);
        }
        prop_assert_eq!(pit.len(), faces.len());
        Ok(())
    }))
}

/// The stored freshness stamp per name is the largest one inserted.
pub fn cs_freshness(cases: u32) -> Result<(), String> {
    let ops = prop::collection::vec((0u8..6, -1000i64..1000, any::<u8>()), 1..80);
    failed(runner(cases).run(&ops, |ops| {
        let mut cs = ContentStore::new(64);
        let mut newest: BTreeMap<u8, i64> = BTreeMap::new();
        for (n, ts, byte) in ops {
            cs.insert(small_name(n), Bytes::from(vec![byte]), ts);
            let m = newest.entry(n).or_insert(ts);
            *m = (*m).max(ts);
        }
        for (n, ts) in &newest {
            prop_assert_eq!(cs.peek(&small_name(*n)).map(|e| e.ts), Some(*ts));
        }
        prop_assert_eq!(cs.len(), newest.len());
        Ok(())
    }))
}

/// A small random network run for the end-to-end properties.
#[derive(Debug, Clone)]
pub struct NetCase {
    pub seed: u64,
    pub topology: u8,
    pub delay_ms: u64,
    pub rates: (u32, u32),
    pub queries: Vec<(u8, bool)>,
}

const NET_QUERIES: [&str; 5] = [
    "GPS_S1",
    "WINDOW(GPS_S1, 1s)",
    "FILTER(WINDOW(GPS_S2, 2s),'latitude'<0)",
    "AGGREGATE(count, 'speed', WINDOW(GPS_S1, 1s))",
    "JOIN(WINDOW(GPS_S1, 1s), WINDOW(GPS_S2, 1s), GPS_S1.'ts' = GPS_S2.'ts')",
];

pub fn net_case() -> impl Strategy<Value = NetCase> {
    (
        any::<u64>(),
        0u8..4,
        1u64..6,
        (1u32..300, 1u32..300),
        prop::collection::vec((0u8..5, any::<bool>()), 1..4),
    )
        .prop_map(|(seed, topology, delay_ms, rates, queries)| NetCase {
            seed,
            topology,
            delay_ms,
            rates,
            queries,
        })
}

impl NetCase {
    pub fn toml(&self) -> String {
        let (kind, depth, producer, consumer) = match self.topology {
            0 => ("line", 0, "p", "c"),
            1 => ("tree", 1, "p", "c"),
            2 => ("tree", 2, "p", "c"),
            _ => ("manhattan", 0, "n6", "n5"),
        };
        let mut s = format!(
            "seed = {}\nduration = \"2s\"\nwarmup = \"500ms\"\ndrain = \"1s\"\n\
             [topology]\nkind = \"{kind}\"\ndepth = {depth}\ndelay = \"{}ms\"\n",
            self.seed, self.delay_ms
        );
        for (src, rate) in [("GPS_S1", self.rates.0), ("GPS_S2", self.rates.1)] {
            s += &format!("[[producers]]\nnode = \"{producer}\"\nsource = \"{src}\"\nschema = \"gps\"\nrate = {rate}\n");
        }
        for (q, pull) in &self.queries {
            let mode = if *pull { "pr" } else { "ucl" };
            s += &format!(
                "[[queries]]\nconsumer = \"{consumer}\"\nquery = \"{}\"\nmode = \"{mode}\"\naccuracy = false\n",
                NET_QUERIES[*q as usize].replace('"', "\\\"")
            );
        }
        s
    }

    pub fn run(&self) -> (Simulator, MetricsReport) {
        let sc =
            Scenario::from_toml(&self.toml()).unwrap_or_else(|e| panic!("{e}\n{}", self.toml()));
        let mut sim = Simulator::new(sc).unwrap();
        let rep = sim.run();
        (sim, rep)
    }
}

fn check_quiescent(sim: &Simulator) -> Result<(), TestCaseError> {
    for n in sim.nodes() {
        let left: Vec<String> = n.pit.continuous_names().map(ToString::to_string).collect();
        prop_assert!(
            left.is_empty(),
            "{} still holds continuous entries {:?}",
            n.id,
            left
        );
        prop_assert!(n.cep.is_idle(), "{} still hosts operators", n.id);
    }
    Ok(())
}

fn check_fifo(rep: &MetricsReport) -> Result<(), TestCaseError> {
    for q in &rep.queries {
        prop_assert_eq!(
            q.fifo_violations,
            0,
            "{} [{}] delivered out of order",
            q.query,
            q.mode
        );
    }
    Ok(())
}

/// After every consumer removed its interests, no node keeps a continuous
/// PIT entry or a hosted operator.
pub fn remove_quiescence(cases: u32) -> Result<(), String> {
    failed(runner(cases).run(&net_case(), |c| {
        let (sim, _) = c.run();
        check_quiescent(&sim)
    }))
}

/// Results for one query reach its consumer in key order.
pub fn per_qname_fifo(cases: u32) -> Result<(), String> {
    failed(runner(cases).run(&net_case(), |c| {
        let (_, rep) = c.run();
        check_fifo(&rep)
    }))
}

/// Both network properties over the same generated runs.
pub fn network_invariants(cases: u32) -> Result<(), String> {
    failed(runner(cases).run(&net_case(), |c| {
        let (sim, rep) = c.run();
        check_quiescent(&sim)?;
        check_fifo(&rep)
    }))
}

/// Raw stream of one producer into one consumer over the default line.
pub fn raw_stream_toml(rate: u32, seconds: u32, mode: &str) -> String {
    format!(
        "seed = 5\nduration = \"{seconds}s\"\nwarmup = \"1s\"\nmode = \"{mode}\"\n\
         [topology]\nkind = \"line\"\n\
         [[producers]]\nnode = \"p\"\nsource = \"GPS_S1\"\nschema = \"gps\"\nrate = {rate}\n\
         [[queries]]\nconsumer = \"c\"\nquery = \"GPS_S1\"\n"
    )
}

pub fn run_toml(text: &str) -> MetricsReport {
    let sc = Scenario::from_toml(text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    Simulator::new(sc).unwrap().run()
}
