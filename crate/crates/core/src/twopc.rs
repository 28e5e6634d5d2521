//! Two-phase commit baseline: a trial barrier on the same group precedes
//! every blocking collective.
//!
//! A rank that has not completed its trial barrier when the request arrives
//! is safe where it stands, since its peers cannot pass the barrier without
//! it. Ranks whose trial barrier has been entered by every member run the
//! real collective to completion first.

use serde::{Deserialize, Serialize};

use crate::domain::{CommunicatorHandle, Rank, RequestId};
use crate::error::SimError;
use crate::sim::{ProtocolAdapter, ProtocolKind};
use crate::workload::Workload;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TwoPcPhase {
    #[default]
    Running,
    Safe,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TwoPcState {
    pub in_trial_barrier: bool,
    pub ckpt_pending: bool,
    pub phase: TwoPcPhase,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TwoPcProtocol {
    ranks: Vec<TwoPcState>,
}

impl TwoPcProtocol {
    pub fn new(world_size: u32) -> Self {
        TwoPcProtocol {
            ranks: vec![TwoPcState::default(); world_size as usize],
        }
    }

    pub fn state(&self, rank: Rank) -> &TwoPcState {
        &self.ranks[rank.index()]
    }

    fn frozen(&self, rank: Rank) -> bool {
        self.ranks[rank.index()].ckpt_pending
    }
}

impl ProtocolAdapter for TwoPcProtocol {
    fn kind(&self) -> ProtocolKind {
        ProtocolKind::TwoPc
    }

    fn admit(&self, workload: &Workload) -> Result<(), SimError> {
        if workload.has_nonblocking() {
            return Err(SimError::Unsupported(
                "two-phase commit does not support non-blocking collectives".into(),
            ));
        }
        Ok(())
    }

    fn trial_barrier(&self) -> bool {
        true
    }

    fn checkpoint_pending(&self) -> bool {
        self.ranks.first().is_some_and(|s| s.ckpt_pending)
    }

    fn on_checkpoint_request(&mut self) {
        for s in &mut self.ranks {
            s.ckpt_pending = true;
        }
    }

    fn may_enter(&self, rank: Rank) -> bool {
        !self.frozen(rank)
    }

    fn may_run_local(&self, rank: Rank) -> bool {
        !self.frozen(rank)
    }

    fn on_enter(
        &mut self,
        _rank: Rank,
        _comm: &CommunicatorHandle,
        request: Option<RequestId>,
    ) -> Result<Vec<(Rank, crate::cc::ProtocolMsg)>, SimError> {
        if request.is_some() {
            return Err(SimError::Unsupported(
                "two-phase commit does not support non-blocking collectives".into(),
            ));
        }
        Ok(Vec::new())
    }

    fn may_leave(&self, _rank: Rank) -> bool {
        true
    }

    fn on_trial(&mut self, rank: Rank, inside: bool) {
        self.ranks[rank.index()].in_trial_barrier = inside;
    }
}
