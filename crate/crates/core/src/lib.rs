//! Collective Clock: coordinating checkpoints of MPI-style programs that use
//! collective communication.
//!
//! The crate has four layers:
//!
//! * [`domain`] holds the value types: ranks, global group ids, the `SEQ`
//!   and `TARGET` tables and request handles.
//! * [`workload`] parses, validates and generates per-rank programs.
//! * [`sim`] executes a workload deterministically under a protocol:
//!   [`cc`] (the Collective Clock), [`twopc`] (the two-phase-commit
//!   baseline) or none at all.
//! * [`oracle`] rebuilds the execution graph from an event log, judges
//!   snapshot cuts and enumerates every interleaving of small instances.
//!
//! ```
//! use collective_clock::cc::{CcOptions, CcProtocol};
//! use collective_clock::sim::{run, RequestAt, SimConfig};
//! use collective_clock::workload::parse_workload;
//!
//! let w = parse_workload("world 2\nrank 0,1: barrier world *3\n").unwrap();
//! let cc = CcProtocol::new(2, CcOptions::default());
//! let result = run(&SimConfig::new(2), &w, cc, Some(RequestAt::Step(3))).unwrap();
//! assert!(result.verdict.unwrap().all_passed());
//! ```

pub mod cc;
pub mod domain;
pub mod error;
pub mod oracle;
pub mod sim;
pub mod twopc;
pub mod workload;

pub use error::{DomainError, GenerateError, LogError, ParseError, SimError};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/collective-clock.md")]
    mod collective_clock {}
    #[doc = include_str!("../../../book/src/simulator.md")]
    mod simulator {}
    #[doc = include_str!("../../../book/src/workload-format.md")]
    mod workload_format {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/two-phase-commit.md")]
    mod two_phase_commit {}
}
