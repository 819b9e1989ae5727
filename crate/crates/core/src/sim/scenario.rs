//! Scenario files: TOML documents describing topology, producers, queries
//! and timing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::flow::{DEFAULT_K, DEFAULT_PERIOD};
use crate::ingest::SchemaKind;
use crate::query::{compile, Area, QueryAst, QueryParams};
use crate::topology::{
    build_topology, LinkParams, LinkSpec, NodeSpec, Role, Topology, TopologyKind,
};
use crate::SimTime;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Continuous interests with in-network operators.
    Ucl,
    /// Periodic pull of single events, processed at the consumer.
    Pr,
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "ucl" => Ok(Mode::Ucl),
            "pr" => Ok(Mode::Pr),
            other => Err(format!("unknown mode {other:?}, expected ucl or pr")),
        }
    }
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Ucl => "ucl",
            Mode::Pr => "pr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Dur(SimTime);

impl<'de> Deserialize<'de> for Dur {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let t: Duration = humantime::parse_duration(&s).map_err(serde::de::Error::custom)?;
        Ok(Dur(t.as_micros() as SimTime))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    #[serde(default)]
    seed: u64,
    duration: Dur,
    warmup: Option<Dur>,
    drain: Option<Dur>,
    mode: Option<Mode>,
    management_period: Option<Dur>,
    processing_delay: Option<Dur>,
    k: Option<u8>,
    #[serde(default = "yes")]
    flow_control: bool,
    topology: TopologyFile,
    #[serde(default)]
    producers: Vec<ProducerFile>,
    #[serde(default)]
    queries: Vec<QueryFile>,
    #[serde(default)]
    params: ParamsFile,
    #[serde(default)]
    down: Vec<String>,
}

fn tree_depth() -> usize {
    3
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    kind: TopologyKind,
    #[serde(default = "tree_depth")]
    depth: usize,
    delay: Option<Dur>,
    bandwidth: Option<f64>,
    capacity: Option<f64>,
    #[serde(default)]
    nodes: Vec<NodeFile>,
    #[serde(default)]
    links: Vec<LinkFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    id: String,
    role: Role,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    a: String,
    b: String,
    delay: Option<Dur>,
    bandwidth: Option<f64>,
    capacity: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProducerFile {
    node: String,
    source: String,
    schema: SchemaKind,
    rate: f64,
    csv: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryFile {
    consumer: String,
    query: String,
    mode: Option<Mode>,
    poll_rate: Option<f64>,
    start: Option<Dur>,
    accuracy: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsFile {
    cell_size: Option<f64>,
    area: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ProducerSpec {
    pub node: String,
    pub source: String,
    pub schema: SchemaKind,
    /// Events per second.
    pub rate: f64,
    /// Values are taken from this file in order, cycling when exhausted.
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct QuerySpec {
    pub consumer: String,
    pub text: String,
    pub ast: QueryAst,
    pub mode: Mode,
    /// Interests per second and source in pull mode.
    pub poll_rate: Option<f64>,
    pub start: SimTime,
    /// Compare delivered results against the reference evaluation.
    pub accuracy: bool,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub duration: SimTime,
    pub warmup: SimTime,
    pub drain: SimTime,
    pub management_period: SimTime,
    pub processing_delay: SimTime,
    pub k: u8,
    pub flow_control: bool,
    pub topology: Topology,
    pub producers: Vec<ProducerSpec>,
    pub queries: Vec<QuerySpec>,
    pub params: QueryParams,
    pub down: BTreeSet<String>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let mut s = Scenario::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in &mut s.producers {
            if let Some(c) = &p.csv {
                if c.is_relative() {
                    p.csv = Some(base.join(c));
                }
            }
        }
        Ok(s)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let f: File = toml::from_str(text)?;
        let bad = |m: String| ConfigError::Invalid(m);
        let duration = f.duration.0;
        let warmup = f.warmup.map_or(0, |d| d.0);
        if duration == 0 || warmup >= duration {
            return Err(bad(
                "duration must be positive and longer than the warm-up".into()
            ));
        }
        let t = &f.topology;
        let defaults = LinkParams::default();
        let bandwidth = t.bandwidth.unwrap_or(defaults.bandwidth);
        let link_params = LinkParams {
            delay_us: t.delay.map_or(defaults.delay_us, |d| d.0),
            bandwidth,
            capacity: t.capacity.unwrap_or(bandwidth),
        };
        let topology = match t.kind {
            TopologyKind::Custom => {
                let nodes = t
                    .nodes
                    .iter()
                    .map(|n| NodeSpec {
                        id: n.id.clone(),
                        role: n.role,
                    })
                    .collect();
                let links = t
                    .links
                    .iter()
                    .map(|l| {
                        let bw = l.bandwidth.unwrap_or(link_params.bandwidth);
                        LinkSpec {
                            a: l.a.clone(),
                            b: l.b.clone(),
                            delay_us: l.delay.map_or(link_params.delay_us, |d| d.0),
                            bandwidth: bw,
                            capacity: l.capacity.or(t.capacity).unwrap_or(bw),
                        }
                    })
                    .collect();
                Topology::new(t.kind, nodes, links)
            }
            kind => {
                if !t.nodes.is_empty() || !t.links.is_empty() {
                    return Err(bad(
                        "nodes and links are only allowed for custom topologies".into(),
                    ));
                }
                build_topology(kind, t.depth, link_params)
            }
        }
        .map_err(|e| bad(e.to_string()))?;

        let mut params = QueryParams::default();
        if let Some(c) = f.params.cell_size {
            if !(c > 0.0 && c.is_finite()) {
                return Err(bad(format!("cell_size must be positive, got {c}")));
            }
            params.cell_size = c;
        }
        if let Some(a) = &f.params.area {
            params.area = Area::parse(a)
                .filter(Area::is_well_ordered)
                .ok_or_else(|| bad(format!("bad area {a:?}")))?;
        }

        let mut producers = Vec::new();
        let mut sources = BTreeSet::new();
        for p in f.producers {
            if topology.node(&p.node).is_none() {
                return Err(bad(format!("producer node {} does not exist", p.node)));
            }
            if !(p.rate > 0.0 && p.rate.is_finite()) {
                return Err(bad(format!(
                    "producer rate must be positive, got {}",
                    p.rate
                )));
            }
            if !sources.insert(p.source.clone()) {
                return Err(bad(format!("source {} has two producers", p.source)));
            }
            producers.push(ProducerSpec {
                node: p.node,
                source: p.source,
                schema: p.schema,
                rate: p.rate,
                csv: p.csv,
            });
        }

        let mut queries = Vec::new();
        for q in f.queries {
            if topology.node(&q.consumer).is_none() {
                return Err(bad(format!("consumer node {} does not exist", q.consumer)));
            }
            let ast =
                compile(&q.query, &params).map_err(|e| bad(format!("query {:?}: {e}", q.query)))?;
            for s in ast.sources() {
                if !sources.contains(&s) {
                    return Err(bad(format!(
                        "query {:?} reads {s}, which has no producer",
                        q.query
                    )));
                }
            }
            if let Some(r) = q.poll_rate {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(bad(format!("poll_rate must be positive, got {r}")));
                }
            }
            queries.push(QuerySpec {
                consumer: q.consumer,
                text: q.query,
                ast,
                mode: q.mode.or(f.mode).unwrap_or(Mode::Ucl),
                poll_rate: q.poll_rate,
                start: q.start.map_or(0, |d| d.0),
                accuracy: q.accuracy.unwrap_or(true),
            });
        }
        let down: BTreeSet<String> = f.down.into_iter().collect();
        if let Some(d) = down.iter().find(|d| topology.node(d).is_none()) {
            return Err(bad(format!("down node {d} does not exist")));
        }
        let management_period = f.management_period.map_or(DEFAULT_PERIOD, |d| d.0);
        if management_period == 0 {
            return Err(bad("management_period must be positive".into()));
        }
        Ok(Scenario {
            seed: f.seed,
            duration,
            warmup,
            drain: f.drain.map_or(2_000_000, |d| d.0),
            management_period,
            processing_delay: f.processing_delay.map_or(10, |d| d.0),
            k: f.k.unwrap_or(DEFAULT_K),
            flow_control: f.flow_control,
            topology,
            producers,
            queries,
            params,
            down,
        })
    }

    /// Forces every query into `mode`.
    pub fn with_mode(mut self, mode: Mode) -> Self {
        for q in &mut self.queries {
            q.mode = mode;
        }
        self
    }

    pub fn producer_of(&self, source: &str) -> Option<&ProducerSpec> {
        self.producers.iter().find(|p| p.source == source)
    }
}
