use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::sim::{Outcome, ProgressPolicy, ProtocolAdapter, Transition, World};
use crate::workload::Workload;

/// Limits on exhaustive exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreBounds {
    pub max_world: u32,
    pub max_instructions: usize,
    /// Distinct states visited before giving up with a partial verdict.
    pub max_states: usize,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        ExploreBounds {
            max_world: 4,
            max_instructions: 24,
            max_states: 2_000_000,
        }
    }
}

impl ExploreBounds {
    pub fn with_instructions(mut self, n: usize) -> Self {
        self.max_instructions = n;
        self
    }
}

/// When the checkpoint request may arrive during exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestMode {
    Never,
    /// At every reachable state, as one more scheduler choice.
    Anywhere,
    /// Once the workload's `request_after` budgets leave nothing to run.
    Script,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    pub message: String,
    pub trace: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreVerdict {
    pub states: usize,
    pub completions: usize,
    pub snapshots: usize,
    /// True when a bound cut the search short; the verdict is then partial.
    pub bounded: bool,
    pub bound_reason: Option<String>,
    pub deadlock: Option<Witness>,
    pub violation: Option<Witness>,
    /// Distinct snapshot frontiers, each a sorted list of
    /// `(communicator, ordinal)`.
    pub frontiers: BTreeSet<Vec<(String, u64)>>,
}

impl ExploreVerdict {
    /// No deadlock or violation found and the search was exhaustive.
    pub fn is_safe(&self) -> bool {
        !self.bounded && self.deadlock.is_none() && self.violation.is_none()
    }
}

/// Depth-first enumeration of every scheduler choice, memoized on the
/// world state. Stops at the first deadlock or violated snapshot.
pub fn explore_interleavings<P: ProtocolAdapter>(
    workload: &Workload,
    protocol: P,
    policy: ProgressPolicy,
    request: RequestMode,
    bounds: ExploreBounds,
) -> Result<ExploreVerdict, SimError> {
    let mut verdict = ExploreVerdict::default();
    let total = workload.total_instructions();
    if workload.world_size > bounds.max_world || total > bounds.max_instructions {
        verdict.bounded = true;
        verdict.bound_reason = Some(format!(
            "instance of {} rank(s) and {} instruction(s) exceeds bounds ({} ranks, {} instructions)",
            workload.world_size, total, bounds.max_world, bounds.max_instructions
        ));
        return Ok(verdict);
    }
    let kind = protocol.kind();
    let root = World::new(workload, protocol, policy, request == RequestMode::Script)?;
    let mut seen = HashSet::new();
    let mut stack: Vec<(World<P>, Vec<Transition>)> = vec![(root, Vec::new())];

    while let Some((world, trace)) = stack.pop() {
        if !seen.insert(world.core().clone()) {
            continue;
        }
        verdict.states += 1;
        if verdict.states > bounds.max_states {
            verdict.bounded = true;
            verdict.bound_reason = Some(format!("more than {} states", bounds.max_states));
            return Ok(verdict);
        }
        if world.is_terminal() {
            let result = world.into_result()?;
            match result.outcome {
                Outcome::Completed => verdict.completions += 1,
                Outcome::Snapshot => {
                    verdict.snapshots += 1;
                    if let Some(m) = result.target_mismatches.as_ref().filter(|m| !m.is_empty()) {
                        verdict.violation = Some(witness(format!("targets diverge: {}", m.join("; ")), &trace));
                        return Ok(verdict);
                    }
                    if let Some(v) = &result.verdict {
                        verdict.frontiers.insert(v.frontier.iter().cloned().collect());
                        let failures = v.failures_for(kind);
                        if !failures.is_empty() {
                            let msg = failures
                                .iter()
                                .map(|c| format!("{}: {}", c.check, c.witnesses.join("; ")))
                                .collect::<Vec<_>>()
                                .join(" | ");
                            verdict.violation = Some(witness(msg, &trace));
                            return Ok(verdict);
                        }
                    }
                }
            }
            continue;
        }
        let mut choices = world.enabled(request == RequestMode::Anywhere);
        if choices.is_empty() && request == RequestMode::Script && world.can_request() {
            choices.push(Transition::Request);
        }
        if choices.is_empty() {
            verdict.deadlock = Some(witness(world.deadlock_report().to_string(), &trace));
            return Ok(verdict);
        }
        for t in choices.into_iter().rev() {
            let mut next = world.clone();
            match next.apply(&t) {
                Ok(()) => {}
                Err(SimError::Erroneous(m)) => {
                    let mut tr = trace.clone();
                    tr.push(t);
                    verdict.violation = Some(witness(format!("erroneous program: {m}"), &tr));
                    return Ok(verdict);
                }
                Err(e) => return Err(e),
            }
            let mut tr = trace.clone();
            tr.push(t);
            stack.push((next, tr));
        }
    }
    Ok(verdict)
}

fn witness(message: String, trace: &[Transition]) -> Witness {
    Witness {
        message,
        trace: trace.iter().map(|t| format!("{t:?}")).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cc::{CcOptions, CcProtocol};
    use crate::sim::NoProtocol;
    use crate::workload::parse_workload;

    #[test]
    fn two_rank_barrier_is_safe_for_every_request_instant() {
        let w = parse_workload("world 2\nrank 0,1: barrier world *2\n").unwrap();
        let v = explore_interleavings(
            &w,
            CcProtocol::new(2, CcOptions::default()),
            ProgressPolicy::Eager,
            RequestMode::Anywhere,
            ExploreBounds::default(),
        )
        .unwrap();
        assert!(v.is_safe(), "{v:?}");
        assert!(v.snapshots > 0);
    }

    #[test]
    fn cyclic_collectives_deadlock() {
        let w = parse_workload(
            "world 2\nrank 0,1: create_comm c1 0,1\nrank 0,1: create_comm c2 0,1\n\
             rank 0: barrier c1\nrank 0: barrier c2\nrank 1: barrier c2\nrank 1: barrier c1\n",
        )
        .unwrap();
        let v = explore_interleavings(
            &w,
            NoProtocol,
            ProgressPolicy::Eager,
            RequestMode::Never,
            ExploreBounds::default(),
        )
        .unwrap();
        assert!(v.deadlock.is_some(), "{v:?}");
    }

    #[test]
    fn oversized_instances_give_partial_verdicts() {
        let w = parse_workload("world 2\nrank 0,1: barrier world *20\n").unwrap();
        let v = explore_interleavings(
            &w,
            NoProtocol,
            ProgressPolicy::Eager,
            RequestMode::Never,
            ExploreBounds::default(),
        )
        .unwrap();
        assert!(v.bounded);
        assert_eq!(v.states, 0);
    }
}
