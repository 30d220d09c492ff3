//! Finite-time quantized ratio consensus for balancing CPU workload across
//! server nodes.
//!
//! Nodes hold integer mass pairs, split them into near-equal pieces routed
//! at random over a strongly connected digraph, and stop together once a
//! windowed max/min consensus shows every node's ratio lies within one of
//! every other. The final ratio is the floor or ceiling of the scaled
//! network-wide utilization target, from which each node reads off its
//! workload share.
//!
//! - [`topology`]: digraphs, random generation, connectivity and diameter.
//! - [`problem`]: scheduling instances and closed-form targets.
//! - [`protocol`]: the per-node state machine.
//! - [`engine`]: synchronous rounds, trials and sweeps.
//! - [`oracle`]: independent verification and convergence bounds.
//! - [`cli`]: the `qsched` command line.

pub mod cli;
pub mod engine;
pub mod oracle;
pub mod problem;
pub mod protocol;
pub mod topology;

pub use engine::{run_sweep, run_trial, TrialConfig, TrialResult};
pub use problem::{ProblemInstance, Rational};
pub use topology::Digraph;
