//! The guide's chapters, compiled so their code listings run as doctests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/names-and-packets.md")]
pub mod names_and_packets {}
#[doc = include_str!("../../../book/src/forwarding.md")]
pub mod forwarding {}
#[doc = include_str!("../../../book/src/flow-control.md")]
pub mod flow_control {}
#[doc = include_str!("../../../book/src/queries.md")]
pub mod queries {}
#[doc = include_str!("../../../book/src/operators.md")]
pub mod operators {}
#[doc = include_str!("../../../book/src/placement.md")]
pub mod placement {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
