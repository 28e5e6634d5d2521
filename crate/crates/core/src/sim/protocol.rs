use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::cc::{CcOptions, CcProtocol, ProtocolMsg};
use crate::domain::{CommunicatorHandle, Ggid, Rank, RequestId, SeqTable, TargetTable};
use crate::error::SimError;
use crate::twopc::TwoPcProtocol;
use crate::workload::Workload;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    None,
    Cc,
    #[serde(rename = "2pc")]
    TwoPc,
}

impl ProtocolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProtocolKind::None => "none",
            ProtocolKind::Cc => "cc",
            ProtocolKind::TwoPc => "2pc",
        }
    }
}

impl fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ProtocolKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(ProtocolKind::None),
            "cc" => Ok(ProtocolKind::Cc),
            "2pc" => Ok(ProtocolKind::TwoPc),
            other => Err(format!("unknown protocol `{other}` (expected cc, 2pc or none)")),
        }
    }
}

/// The hooks a checkpoint-coordination protocol installs around the
/// simulated MPI calls of every rank.
///
/// The runtime owns the protocol value for the whole world, but each hook
/// only touches the state of the rank it names; cross-rank effects travel
/// as [`ProtocolMsg`]s through the runtime's protocol channel.
pub trait ProtocolAdapter: Clone + Eq + Hash + fmt::Debug {
    fn kind(&self) -> ProtocolKind;

    /// Rejects workloads the protocol cannot handle.
    fn admit(&self, _workload: &Workload) -> Result<(), SimError> {
        Ok(())
    }

    /// Whether checkpoint requests are honored at all.
    fn takes_checkpoints(&self) -> bool {
        true
    }

    /// Whether every blocking collective is preceded by a trial barrier.
    fn trial_barrier(&self) -> bool {
        false
    }

    fn checkpoint_pending(&self) -> bool;

    fn on_checkpoint_request(&mut self);

    /// Gate at wrapper entry, before a collective (or its trial barrier).
    fn may_enter(&self, rank: Rank) -> bool;

    /// Gate before a non-collective instruction.
    fn may_run_local(&self, _rank: Rank) -> bool {
        true
    }

    /// Wrapper work between the entry gate and the real call; returns the
    /// protocol messages to send.
    fn on_enter(
        &mut self,
        rank: Rank,
        comm: &CommunicatorHandle,
        request: Option<RequestId>,
    ) -> Result<Vec<(Rank, ProtocolMsg)>, SimError>;

    /// Gate at wrapper exit, after the real call returned.
    fn may_leave(&self, rank: Rank) -> bool;

    fn on_trial(&mut self, _rank: Rank, _inside: bool) {}

    fn on_request_complete(&mut self, _rank: Rank, _req: RequestId) -> Result<(), SimError> {
        Ok(())
    }

    /// Collective requests the protocol must see completed before a snapshot.
    fn pending_requests(&self, _rank: Rank) -> Vec<RequestId> {
        Vec::new()
    }

    fn on_message(&mut self, _rank: Rank, _msg: &ProtocolMsg) {}

    fn on_p2p_complete(&mut self, _rank: Rank, _peer: Rank) {}

    /// A message asking `peer` to keep executing, if `rank` needs it.
    fn release_for(&self, _rank: Rank, _peer: Rank) -> Option<ProtocolMsg> {
        None
    }

    fn on_release_sent(&mut self, _rank: Rank, _peer: Rank, _msg: &ProtocolMsg) {}

    /// True when the rank's own protocol obligations are met.
    fn settled(&self, _rank: Rank) -> bool {
        true
    }

    fn tables(&self, _rank: Rank) -> Option<(&SeqTable, &TargetTable)> {
        None
    }

    fn initial_targets(&self) -> Option<&BTreeMap<Ggid, u64>> {
        None
    }

    /// Target disagreements among group members, for protocols that keep
    /// targets. Meaningful once quiescent.
    fn convergence_problems(&self) -> Option<Vec<String>> {
        None
    }
}

/// Native execution: no interposition at all.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct NoProtocol;

impl ProtocolAdapter for NoProtocol {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::None
    }

    fn takes_checkpoints(&self) -> bool {
        false
    }

    fn checkpoint_pending(&self) -> bool {
        false
    }

    fn on_checkpoint_request(&mut self) {}

    fn may_enter(&self, _rank: Rank) -> bool {
        true
    }

    fn on_enter(
        &mut self,
        _rank: Rank,
        _comm: &CommunicatorHandle,
        _request: Option<RequestId>,
    ) -> Result<Vec<(Rank, ProtocolMsg)>, SimError> {
        Ok(Vec::new())
    }

    fn may_leave(&self, _rank: Rank) -> bool {
        true
    }
}

/// Runtime-selected protocol.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AnyProtocol {
    None(NoProtocol),
    Cc(CcProtocol),
    TwoPc(TwoPcProtocol),
}

impl AnyProtocol {
    pub fn new(kind: ProtocolKind, world_size: u32) -> Self {
        match kind {
            ProtocolKind::None => AnyProtocol::None(NoProtocol),
            ProtocolKind::Cc => AnyProtocol::Cc(CcProtocol::new(world_size, CcOptions::default())),
            ProtocolKind::TwoPc => AnyProtocol::TwoPc(TwoPcProtocol::new(world_size)),
        }
    }
}

macro_rules! delegate {
    ($self:ident, $p:ident => $e:expr) => {
        match $self {
            AnyProtocol::None($p) => $e,
            AnyProtocol::Cc($p) => $e,
            AnyProtocol::TwoPc($p) => $e,
        }
    };
}

impl ProtocolAdapter for AnyProtocol {
    fn kind(&self) -> ProtocolKind {
        delegate!(self, p => p.kind())
    }
    fn admit(&self, workload: &Workload) -> Result<(), SimError> {
        delegate!(self, p => p.admit(workload))
    }
    fn takes_checkpoints(&self) -> bool {
        delegate!(self, p => p.takes_checkpoints())
    }
    fn trial_barrier(&self) -> bool {
        delegate!(self, p => p.trial_barrier())
    }
    fn checkpoint_pending(&self) -> bool {
        delegate!(self, p => p.checkpoint_pending())
    }
    fn on_checkpoint_request(&mut self) {
        delegate!(self, p => p.on_checkpoint_request())
    }
    fn may_enter(&self, rank: Rank) -> bool {
        delegate!(self, p => p.may_enter(rank))
    }
    fn may_run_local(&self, rank: Rank) -> bool {
        delegate!(self, p => p.may_run_local(rank))
    }
    fn on_enter(
        &mut self,
        rank: Rank,
        comm: &CommunicatorHandle,
        request: Option<RequestId>,
    ) -> Result<Vec<(Rank, ProtocolMsg)>, SimError> {
        delegate!(self, p => p.on_enter(rank, comm, request))
    }
    fn may_leave(&self, rank: Rank) -> bool {
        delegate!(self, p => p.may_leave(rank))
    }
    fn on_trial(&mut self, rank: Rank, inside: bool) {
        delegate!(self, p => p.on_trial(rank, inside))
    }
    fn on_request_complete(&mut self, rank: Rank, req: RequestId) -> Result<(), SimError> {
        delegate!(self, p => p.on_request_complete(rank, req))
    }
    fn pending_requests(&self, rank: Rank) -> Vec<RequestId> {
        delegate!(self, p => p.pending_requests(rank))
    }
    fn on_message(&mut self, rank: Rank, msg: &ProtocolMsg) {
        delegate!(self, p => p.on_message(rank, msg))
    }
    fn on_p2p_complete(&mut self, rank: Rank, peer: Rank) {
        delegate!(self, p => p.on_p2p_complete(rank, peer))
    }
    fn release_for(&self, rank: Rank, peer: Rank) -> Option<ProtocolMsg> {
        delegate!(self, p => p.release_for(rank, peer))
    }
    fn on_release_sent(&mut self, rank: Rank, peer: Rank, msg: &ProtocolMsg) {
        delegate!(self, p => p.on_release_sent(rank, peer, msg))
    }
    fn settled(&self, rank: Rank) -> bool {
        delegate!(self, p => p.settled(rank))
    }
    fn tables(&self, rank: Rank) -> Option<(&SeqTable, &TargetTable)> {
        delegate!(self, p => p.tables(rank))
    }
    fn initial_targets(&self) -> Option<&BTreeMap<Ggid, u64>> {
        delegate!(self, p => p.initial_targets())
    }
    fn convergence_problems(&self) -> Option<Vec<String>> {
        delegate!(self, p => p.convergence_problems())
    }
}
