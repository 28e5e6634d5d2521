//! Deterministic discrete-event simulator of an MPI-like world.
//!
//! Blocking collectives are synchronizing (no member exits before every
//! member entered), non-blocking collectives progress in the background
//! once every member initiated them, and point-to-point messages use a
//! synchronous rendezvous. Logical time is the scheduler step.

mod events;
mod protocol;
mod world;

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Ggid, Rank};
use crate::error::SimError;
use crate::oracle::{self, Verdict};
use crate::workload::Workload;

pub use events::{read_event_log, write_event_log, Action, MsgKind, SimEvent};
pub use protocol::{AnyProtocol, NoProtocol, ProtocolAdapter, ProtocolKind};
pub use world::{Phase, Transition, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProgressPolicy {
    /// A non-blocking collective completes on every member the moment the
    /// last member initiates it.
    Eager,
    /// Completion is only observed when the owning rank tests or waits.
    Lazy,
    /// Completion is a separate background event chosen by the scheduler.
    Randomized,
}

impl ProgressPolicy {
    pub const ALL: [ProgressPolicy; 3] = [
        ProgressPolicy::Eager,
        ProgressPolicy::Lazy,
        ProgressPolicy::Randomized,
    ];
}

impl std::str::FromStr for ProgressPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "eager" => Ok(ProgressPolicy::Eager),
            "lazy" => Ok(ProgressPolicy::Lazy),
            "random" | "randomized" => Ok(ProgressPolicy::Randomized),
            other => Err(format!("unknown progress policy `{other}`")),
        }
    }
}

impl fmt::Display for ProgressPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProgressPolicy::Eager => "eager",
            ProgressPolicy::Lazy => "lazy",
            ProgressPolicy::Randomized => "random",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SimConfig {
    pub world_size: u32,
    pub scheduler_seed: u64,
    pub max_steps: u64,
    pub progress_policy: ProgressPolicy,
}

impl SimConfig {
    pub fn new(world_size: u32) -> Self {
        SimConfig {
            world_size,
            scheduler_seed: 0,
            max_steps: 1_000_000,
            progress_policy: ProgressPolicy::Eager,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.scheduler_seed = seed;
        self
    }

    pub fn policy(mut self, policy: ProgressPolicy) -> Self {
        self.progress_policy = policy;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.world_size == 0 {
            return Err(SimError::Config("world_size must be at least 1".into()));
        }
        if self.max_steps == 0 {
            return Err(SimError::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// When the checkpoint request is injected.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RequestAt {
    /// Before the scheduler step with this index.
    Step(u64),
    /// When the workload's `request_after` budgets are exhausted.
    Script,
}

/// Count-based overhead metrics of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub protocol_messages_before_request: u64,
    pub protocol_messages_after_request: u64,
    pub extra_sync_events: u64,
    pub steps_to_quiesce: Option<u64>,
    pub collectives_executed_past_request: BTreeMap<String, u64>,
    pub drain_iterations: u64,
    pub steps: u64,
    pub events: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Completed,
    Snapshot,
}

/// What one rank was stuck on when no transition remained.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedRank {
    pub rank: Rank,
    pub pc: usize,
    pub awaiting: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeadlockReport {
    pub step: u64,
    pub blocked: Vec<BlockedRank>,
    #[serde(skip)]
    pub events: Vec<SimEvent>,
}

impl fmt::Display for DeadlockReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no enabled transition at step {};", self.step)?;
        for b in &self.blocked {
            write!(f, " rank {} (pc {}) awaits {};", b.rank, b.pc, b.awaiting)?;
        }
        Ok(())
    }
}

/// Per-rank position at the snapshot, as reported by the runtime.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankCut {
    pub rank: Rank,
    pub pc: usize,
    pub inside_collective: bool,
    pub pending_requests: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCut {
    /// Index of the first `snapshot-taken` event; events before it are in
    /// the cut.
    pub at_step: u64,
    pub ranks: Vec<RankCut>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankSummary {
    pub rank: Rank,
    pub pc: usize,
    pub finished: bool,
    pub seq: BTreeMap<String, u64>,
    pub target: BTreeMap<String, u64>,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub protocol: ProtocolKind,
    pub outcome: Outcome,
    pub events: Vec<SimEvent>,
    pub metrics: Metrics,
    pub ranks: Vec<RankSummary>,
    pub initial_targets: Option<BTreeMap<Ggid, u64>>,
    pub cut: Option<SnapshotCut>,
    pub verdict: Option<Verdict>,
    /// Target disagreements at the snapshot; `None` when not applicable.
    pub target_mismatches: Option<Vec<String>>,
}

impl SimResult {
    /// Snapshot passes every oracle check the protocol promises, and
    /// member targets agree.
    pub fn is_safe(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.ok_for(self.protocol))
            && self.target_mismatches.as_ref().is_none_or(|m| m.is_empty())
    }
}

/// Runs `workload` under `protocol` to completion, snapshot, deadlock or
/// runaway. Fully deterministic in its inputs.
pub fn run<P: ProtocolAdapter>(
    config: &SimConfig,
    workload: &Workload,
    protocol: P,
    request: Option<RequestAt>,
) -> Result<SimResult, SimError> {
    config.validate()?;
    if config.world_size != workload.world_size {
        return Err(SimError::Config(format!(
            "config world_size {} does not match workload world size {}",
            config.world_size, workload.world_size
        )));
    }
    let script = matches!(request, Some(RequestAt::Script));
    if script && workload.request_after.is_none() {
        return Err(SimError::Config(
            "scripted request needs a `request_after` line in the workload".into(),
        ));
    }
    let mut world = World::new(workload, protocol, config.progress_policy, script)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.scheduler_seed);
    let request_step = match request {
        Some(RequestAt::Step(s)) => Some(s),
        _ => None,
    };

    loop {
        if world.is_terminal() {
            break;
        }
        if world.steps() >= config.max_steps {
            return Err(SimError::Runaway {
                steps: config.max_steps,
            });
        }
        if request_step == Some(world.steps()) && world.can_request() {
            world.apply(&Transition::Request)?;
            continue;
        }
        let enabled = world.enabled(false);
        if enabled.is_empty() {
            if script && world.can_request() {
                world.apply(&Transition::Request)?;
                continue;
            }
            return Err(SimError::Deadlock(Box::new(world.deadlock_report())));
        }
        let pick = if enabled.len() == 1 {
            0
        } else {
            rng.gen_range(0..enabled.len())
        };
        world.apply(&enabled[pick])?;
    }
    world.into_result()
}

/// Resolves `--request-at random`: a uniformly drawn step within the native
/// run length of the workload under the same seed.
pub fn random_request_step(config: &SimConfig, workload: &Workload, seed: u64) -> Result<u64, SimError> {
    let native = run(config, workload, NoProtocol, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // Strictly before the final step so the request lands while something still runs.
    Ok(rng.gen_range(0..native.metrics.steps.max(1)))
}

impl SimResult {
    /// Checks the snapshot with the oracle, if one was taken.
    pub(crate) fn attach_verdict(&mut self) -> Result<(), SimError> {
        if let Some(cut) = &self.cut {
            let graph = oracle::build_graph(&self.events)
                .map_err(|e| SimError::InvariantViolation(format!("event log rejected: {e}")))?;
            self.verdict = Some(oracle::check_snapshot(&graph, cut));
        }
        Ok(())
    }
}
