//! Declarative per-rank programs.
//!
//! A workload is one instruction list per world rank. The text format is
//! line oriented:
//!
//! ```text
//! # comment
//! world 3
//! rank 0,1,2: barrier world
//! rank 1: create_comm pair 1,2
//! rank 2: create_comm pair 1,2
//! rank 1,2: bcast pair *3
//! rank 0: send 1 7 world
//! rank 1: recv 0 7 world
//! request_after 0:1 1:2
//! ```
//!
//! See `book/src/workload-format.md` for the full grammar.

mod generate;
mod parse;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::Rank;

pub use generate::{generate_random_workload, GenParams};
pub use parse::parse_workload;
pub use validate::{validate_correctness, Finding, ValidationReport};

/// Name of the predefined communicator spanning every rank.
pub const WORLD_COMM: &str = "world";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveKind {
    Barrier,
    Bcast,
    Reduce,
    Alltoall,
}

impl CollectiveKind {
    pub const ALL: [CollectiveKind; 4] = [
        CollectiveKind::Barrier,
        CollectiveKind::Bcast,
        CollectiveKind::Reduce,
        CollectiveKind::Alltoall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CollectiveKind::Barrier => "barrier",
            CollectiveKind::Bcast => "bcast",
            CollectiveKind::Reduce => "reduce",
            CollectiveKind::Alltoall => "alltoall",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for CollectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instruction {
    CreateComm { name: String, members: Vec<Rank> },
    Collective { kind: CollectiveKind, comm: String },
    ICollective { kind: CollectiveKind, comm: String, request: String },
    Test { request: String },
    Wait { request: String },
    WaitAll { requests: Vec<String> },
    Send { peer: Rank, tag: i32, comm: String },
    Recv { peer: Rank, tag: i32, comm: String },
    Compute,
}

impl Instruction {
    pub fn is_collective(&self) -> bool {
        matches!(self, Instruction::Collective { .. } | Instruction::ICollective { .. })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::CreateComm { name, members } => {
                write!(f, "create_comm {name} ")?;
                for (i, m) in members.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{m}")?;
                }
                Ok(())
            }
            Instruction::Collective { kind, comm } => write!(f, "{kind} {comm}"),
            Instruction::ICollective {
                kind,
                comm,
                request,
            } => write!(f, "icollective {kind} {comm} {request}"),
            Instruction::Test { request } => write!(f, "test {request}"),
            Instruction::Wait { request } => write!(f, "wait {request}"),
            Instruction::WaitAll { requests } => write!(f, "waitall {}", requests.join(" ")),
            Instruction::Send { peer, tag, comm } => write!(f, "send {peer} {tag} {comm}"),
            Instruction::Recv { peer, tag, comm } => write!(f, "recv {peer} {tag} {comm}"),
            Instruction::Compute => f.write_str("compute"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WorkloadProgram {
    pub rank: Rank,
    pub instructions: Vec<Instruction>,
}

/// A complete workload: one program per rank, plus an optional scripted
/// checkpoint point (`request_after`): before the request each listed rank
/// may begin at most that many instructions, and the request fires once no
/// permitted transition remains.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Workload {
    pub world_size: u32,
    pub programs: Vec<WorkloadProgram>,
    pub request_after: Option<BTreeMap<Rank, usize>>,
}

impl Workload {
    pub fn new(world_size: u32) -> Self {
        Workload {
            world_size,
            programs: (0..world_size)
                .map(|r| WorkloadProgram {
                    rank: Rank(r),
                    instructions: Vec::new(),
                })
                .collect(),
            request_after: None,
        }
    }

    pub fn program(&self, rank: Rank) -> &[Instruction] {
        &self.programs[rank.index()].instructions
    }

    pub fn push(&mut self, rank: Rank, instr: Instruction) {
        self.programs[rank.index()].instructions.push(instr);
    }

    pub fn total_instructions(&self) -> usize {
        self.programs.iter().map(|p| p.instructions.len()).sum()
    }

    pub fn has_nonblocking(&self) -> bool {
        self.programs
            .iter()
            .flat_map(|p| &p.instructions)
            .any(|i| matches!(i, Instruction::ICollective { .. }))
    }

    /// Number of blocking collective calls summed over ranks.
    pub fn blocking_collective_calls(&self) -> usize {
        self.programs
            .iter()
            .flat_map(|p| &p.instructions)
            .filter(|i| matches!(i, Instruction::Collective { .. }))
            .count()
    }

    /// Renders the workload in the text format; `parse_workload` inverts it.
    pub fn serialize(&self) -> String {
        let mut out = format!("world {}\n", self.world_size);
        for p in &self.programs {
            for instr in &p.instructions {
                out.push_str(&format!("rank {}: {}\n", p.rank, instr));
            }
        }
        if let Some(budgets) = &self.request_after {
            out.push_str("request_after");
            for (r, n) in budgets {
                out.push_str(&format!(" {r}:{n}"));
            }
            out.push('\n');
        }
        out
    }
}
