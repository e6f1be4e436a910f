//! Chance-constrained message passing on Gaussian factor graphs.
//!
//! The crate is layered bottom-up:
//!
//! - [`gaussian`]: univariate Gaussian arithmetic and truncated moments.
//! - [`graph`]: bipartite factor graphs, message boards and explicit schedules.
//! - [`rules`]: sum-product and variational update rules per node kind.
//! - [`chance`]: the chance-constraint correction and its Gaussian-approximated
//!   message, usable as a click-on auxiliary factor on any scalar variable.
//! - [`agent`]: the lookahead drone controller built from the pieces above.
//! - [`simulator`]: the closed-loop environment and Monte-Carlo harness.
//! - [`cli`]: the `ccmp` command-line front end.

pub mod agent;
pub mod chance;
pub mod cli;
pub mod gaussian;
pub mod graph;
pub mod output;
pub mod rules;
pub mod simulator;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
mod oracle;

pub use chance::{ChanceConstraintSpec, CorrectionDiagnostics, SafeRegion};
pub use gaussian::{Canonical, Gaussian1D, TruncatedMoments};
pub use graph::{FactorGraph, Message, MessageBoard, NodeKind, Schedule};
