use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::sim::{ProtocolKind, SnapshotCut};

use super::graph::{ExecutionGraph, NodeId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    /// Every collective visited by one member is visited by all members.
    Completeness,
    /// Nothing is visited that the requested frontier does not depend on.
    Minimality,
    /// No rank is inside a blocking collective.
    OutsideCollectives,
    /// Every initiated non-blocking collective is initiated and completed
    /// by all members.
    NonblockingDrained,
}

impl CheckName {
    pub const ALL: [CheckName; 4] = [
        CheckName::Completeness,
        CheckName::Minimality,
        CheckName::OutsideCollectives,
        CheckName::NonblockingDrained,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Completeness => "completeness",
            CheckName::Minimality => "minimality",
            CheckName::OutsideCollectives => "outside-collectives",
            CheckName::NonblockingDrained => "nonblocking-drained",
        }
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Checks a protocol's snapshots must satisfy. Two-phase commit freezes
/// ranks where they stand, so it makes no minimality promise.
pub fn required_checks(kind: ProtocolKind) -> &'static [CheckName] {
    match kind {
        ProtocolKind::Cc => &CheckName::ALL,
        ProtocolKind::TwoPc => &[
            CheckName::Completeness,
            CheckName::OutsideCollectives,
            CheckName::NonblockingDrained,
        ],
        ProtocolKind::None => &[],
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub check: CheckName,
    pub passed: bool,
    /// One line per offending node or rank.
    pub witnesses: Vec<String>,
}

impl CheckOutcome {
    fn new(check: CheckName, witnesses: Vec<String>) -> Self {
        CheckOutcome {
            check,
            passed: witnesses.is_empty(),
            witnesses,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub checks: Vec<CheckOutcome>,
    /// Collective instances visited at the cut, as `(communicator, ordinal)`.
    pub frontier: BTreeSet<(String, u64)>,
}

impl Verdict {
    pub fn get(&self, check: CheckName) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.check == check)
    }

    pub fn passed(&self, check: CheckName) -> bool {
        self.get(check).is_some_and(|c| c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// True when every check required of `kind` passed.
    pub fn ok_for(&self, kind: ProtocolKind) -> bool {
        required_checks(kind).iter().all(|&c| self.passed(c))
    }

    pub fn failures_for(&self, kind: ProtocolKind) -> Vec<&CheckOutcome> {
        required_checks(kind)
            .iter()
            .filter_map(|&c| self.get(c))
            .filter(|c| !c.passed)
            .collect()
    }
}

/// Re-derives the snapshot conditions from the graph alone. Only events
/// before `cut.at_step` count as visited.
pub fn check_snapshot(graph: &ExecutionGraph, cut: &SnapshotCut) -> Verdict {
    let at = cut.at_step;
    let mut completeness = Vec::new();
    let mut inside = Vec::new();
    let mut drained = Vec::new();
    let mut frontier = BTreeSet::new();

    for node in &graph.collectives {
        if !node.any_visit_before(at) {
            continue;
        }
        frontier.insert((node.comm.clone(), node.ordinal));
        let missing: Vec<String> = node
            .ggid
            .members()
            .iter()
            .filter(|&&m| !node.visited_before(m, at))
            .map(|m| m.to_string())
            .collect();
        if !missing.is_empty() {
            completeness.push(format!("{} not visited by rank(s) {}", node.label(), missing.join(",")));
        }
        for (r, v) in &node.visitors {
            if v.enter >= at {
                continue;
            }
            let done = v.exit.is_some_and(|x| x < at);
            if !done {
                if node.nonblocking {
                    drained.push(format!("{} still pending on rank {r}", node.label()));
                } else {
                    inside.push(format!("rank {r} inside {}", node.label()));
                }
            }
        }
        if node.nonblocking && !missing.is_empty() {
            drained.push(format!("{} not initiated by rank(s) {}", node.label(), missing.join(",")));
        }
    }
    for rc in &cut.ranks {
        if rc.inside_collective {
            inside.push(format!("rank {} reports being inside a collective", rc.rank));
        }
        if !rc.pending_requests.is_empty() {
            drained.push(format!(
                "rank {} holds active request(s) {}",
                rc.rank,
                rc.pending_requests.join(",")
            ));
        }
    }

    let mut minimality = Vec::new();
    if graph.request_step.is_some() {
        let closure = graph.backward_closure(graph.requested_nodes());
        for node in &graph.collectives {
            if node.any_visit_before(at) && !closure.contains(&NodeId::Collective(node.id)) {
                minimality.push(format!(
                    "{} visited but nothing requested depends on it",
                    node.label()
                ));
            }
        }
    } else {
        minimality.push("log has no checkpoint request".to_string());
    }

    Verdict {
        checks: vec![
            CheckOutcome::new(CheckName::Completeness, completeness),
            CheckOutcome::new(CheckName::Minimality, minimality),
            CheckOutcome::new(CheckName::OutsideCollectives, inside),
            CheckOutcome::new(CheckName::NonblockingDrained, drained),
        ],
        frontier,
    }
}
