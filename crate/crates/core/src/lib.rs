//! In-network complex event processing over a content-centric data plane.

pub mod cep;
pub mod flow;
pub mod ingest;
pub mod metrics;
pub mod naming;
pub mod node;
pub mod oracle;
pub mod placement;
pub mod query;
pub mod sim;
pub mod tables;
pub mod topology;

/// Simulated time in microseconds.
pub type SimTime = u64;
