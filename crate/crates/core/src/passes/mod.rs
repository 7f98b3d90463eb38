//! Middle end: LAP to LIMPLE and the optimization passes.

mod call_optim;
mod dead_code;
mod dom;
mod limplify;
mod pipeline;
mod propagate;
mod ssa;
mod tre;

pub use call_optim::call_optim;
pub use dead_code::dead_code;
pub use dom::{compute_dominators, prune_unreachable, DomInfo};
pub use limplify::limplify;
pub use pipeline::{compile_function, run_pipeline, run_to_stage, PipelineError, SpeedConfig, Stage};
pub use propagate::{forward_propagate, lower_hints, PropagateStats};
pub use ssa::{iterated_frontier, ssa_convert, strip_ssa};
pub use tre::tre;
