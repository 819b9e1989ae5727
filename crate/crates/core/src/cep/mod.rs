//! Operator evaluation: pure operator functions, operator trees and the
//! stateful runtime that drives them.

mod engine;
mod event;
mod ops;
mod plan;
mod runtime;

pub use engine::*;
pub use event::*;
pub use ops::*;
pub use plan::*;
pub use runtime::*;
