//! Independent ground truth for snapshot safety.
//!
//! The graph is rebuilt from the event log alone, and the checks never
//! consult protocol state, so a protocol bug cannot hide behind its own
//! bookkeeping.

mod check;
mod explore;
mod graph;

pub use check::{check_snapshot, required_checks, CheckName, CheckOutcome, Verdict};
pub use explore::{explore_interleavings, ExploreBounds, ExploreVerdict, RequestMode, Witness};
pub use graph::{build_graph, CollectiveNode, ExecutionGraph, NodeId, P2pNode, Visit};
